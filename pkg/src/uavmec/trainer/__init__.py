from .buffers import (EpisodeRollout, ExpertBuffer, RolloutBuffer, compute_gae, normalize,
                      update_expert_buffer)
from .dppoil import (Learner, TrainConfig, TrainResult, actor_update, critic_update,
                     discriminator_update, intrinsic_reward, load_snapshot, mixed_reward, train,
                     train_ppo)
from .rollout import (PolicySnapshot, collect_rollouts, episode_rngs, evaluate, learned_actor,
                      make_policy)

__all__ = [
    "EpisodeRollout", "ExpertBuffer", "Learner", "PolicySnapshot", "RolloutBuffer",
    "TrainConfig", "TrainResult", "actor_update", "collect_rollouts", "compute_gae",
    "critic_update", "discriminator_update", "episode_rngs", "evaluate", "intrinsic_reward",
    "learned_actor", "load_snapshot", "make_policy", "mixed_reward", "normalize", "train", "train_ppo",
    "update_expert_buffer",
]
