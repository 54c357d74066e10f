"""Clipped-surrogate training with an adversarial self-imitation discriminator.

Each update: collect episodes with a frozen snapshot, train the discriminator
against the expert buffer, form mixed rewards, estimate advantages, run
minibatch epochs for both actor heads and the critic, then refresh the expert
buffer. With the discriminator disabled this is plain PPO.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..env import EnvConfig, Scenario
from ..nn import Adam, Mlp, log_sigmoid
from . import losses
from .buffers import ExpertBuffer, RolloutBuffer, compute_gae, normalize
from .features import ObservationEncoder
from .rollout import (DISC_STREAM, INIT_STREAM, UPDATE_STREAM, AgentPolicy, PolicySnapshot,
                      collect_rollouts, make_policy, stream)

METRICS_VERSION = 1
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 3000
    workers: int = 4
    episodes_per_update: int = 40
    epochs: int = 10
    minibatch: int = 256
    expert_batch: int = 256
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    intrinsic_scale: float = 0.1
    reward_scale: float = 0.01
    actor_lr: float = 5e-4
    critic_lr: float = 5e-4
    disc_lr: float = 5e-4
    disc_steps: int = 5
    expert_capacity: int = 20
    discriminator_enabled: bool = True
    discriminator_loss: str = "bce"
    hidden: tuple[int, int] = (64, 64)
    checkpoint_every: int = 25

    def __post_init__(self):
        checks = [
            (self.episodes >= 1, "episodes must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.episodes_per_update >= 1, "episodes_per_update must be >= 1"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (0 < self.clip_eps < 1, "clip_eps must lie in (0, 1)"),
            (0 < self.gamma <= 1, "gamma must lie in (0, 1]"),
            (0 <= self.gae_lambda <= 1, "gae_lambda must lie in [0, 1]"),
            (self.intrinsic_scale >= 0, "intrinsic_scale must be >= 0"),
            (self.reward_scale > 0, "reward_scale must be > 0"),
            (self.minibatch >= 1 and self.expert_batch >= 1, "batch sizes must be >= 1"),
            (self.disc_steps >= 1, "disc_steps must be >= 1"),
            (self.expert_capacity >= 1, "expert_capacity must be >= 1"),
            (self.discriminator_loss in ("bce", "paper_literal"),
             "discriminator_loss must be 'bce' or 'paper_literal'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


@dataclass
class AgentLearner:
    policy: AgentPolicy
    disc: Mlp
    opt_flight: Adam
    opt_alloc: Adam
    opt_critic: Adam
    opt_disc: Adam
    expert: ExpertBuffer


def disc_inputs(obs, flight, alloc) -> np.ndarray:
    """Discriminator features: observation, squashed flight action, allocation."""
    return np.concatenate([obs, np.tanh(flight), alloc], axis=-1)


def discriminator_update(net: Mlp, opt: Adam, agent_batch, expert_batch, variant: str = "bce"):
    loss, grads, info = losses.discriminator_loss(net, agent_batch, expert_batch, variant)
    opt.update(net.params, grads)
    return loss, info


def intrinsic_reward(net: Mlp, inputs) -> np.ndarray:
    """log D(o, a1, a2), always <= 0."""
    z, _ = net.forward(inputs)
    return log_sigmoid(z[:, 0])


def mixed_reward(r_ext, r_int, scale: float):
    return np.asarray(r_ext) + scale * np.asarray(r_int)


def actor_update(net: Mlp, opt: Adam, head: str, obs, act, old_logp, adv, eps: float):
    fn = losses.flight_actor_loss if head == "gaussian" else losses.alloc_actor_loss
    loss, grads, info = fn(net, obs, act, old_logp, adv, eps)
    opt.update(net.params, grads)
    return loss, info


def critic_update(net: Mlp, opt: Adam, obs, returns):
    loss, grads, _ = losses.critic_loss(net, obs, returns)
    opt.update(net.params, grads)
    return loss


class Learner:
    """Per-agent networks, optimisers and expert buffers."""

    def __init__(self, env_config: EnvConfig, cfg: TrainConfig, seed: int):
        self.env_config, self.cfg, self.seed = env_config, cfg, seed
        init_rng = stream(seed, INIT_STREAM)
        snap = make_policy(env_config, init_rng, cfg.hidden)
        self.encoder = snap.encoder
        disc_in = snap.encoder.dim + 2 + env_config.world.max_served_sds
        self.agents = [
            AgentLearner(p, Mlp(disc_in, 1, "discriminator", cfg.hidden, init_rng, out_gain=1.0),
                         Adam(cfg.actor_lr), Adam(cfg.actor_lr), Adam(cfg.critic_lr),
                         Adam(cfg.disc_lr), ExpertBuffer(cfg.expert_capacity))
            for p in snap.agents
        ]
        self.update_rng = stream(seed, UPDATE_STREAM)
        self.disc_rng = stream(seed, DISC_STREAM)

    def snapshot(self) -> PolicySnapshot:
        return PolicySnapshot([AgentPolicy(a.policy.flight.copy(), a.policy.alloc.copy(),
                                           a.policy.critic.copy()) for a in self.agents],
                              self.encoder)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for n, a in enumerate(self.agents):
            a.policy.flight.save(d / f"agent{n}_flight.npz")
            a.policy.alloc.save(d / f"agent{n}_alloc.npz")
            a.policy.critic.save(d / f"agent{n}_critic.npz")
            a.disc.save(d / f"agent{n}_disc.npz")
        meta = {"version": CHECKPOINT_VERSION, "agents": len(self.agents),
                "obs_dim": self.env_config.obs_dim, "input_dim": self.encoder.dim,
                "alloc_dim": self.env_config.world.max_served_sds}
        (d / "checkpoint.json").write_text(json.dumps(meta, indent=2))


def load_snapshot(directory, env_config: EnvConfig) -> PolicySnapshot:
    d = Path(directory)
    meta = json.loads((d / "checkpoint.json").read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    if (meta["agents"] != env_config.world.num_uavs or meta["obs_dim"] != env_config.obs_dim
            or meta["alloc_dim"] != env_config.world.max_served_sds):
        raise ValueError(f"checkpoint dims {meta} do not match the scenario config "
                         f"(agents={env_config.world.num_uavs}, obs_dim={env_config.obs_dim}, "
                         f"alloc_dim={env_config.world.max_served_sds})")
    agents = [AgentPolicy(Mlp.load(d / f"agent{n}_flight.npz"), Mlp.load(d / f"agent{n}_alloc.npz"),
                          Mlp.load(d / f"agent{n}_critic.npz")) for n in range(meta["agents"])]
    return PolicySnapshot(agents, ObservationEncoder.for_config(env_config))


def _mixed_rewards(learner: Learner, n: int, data: dict) -> tuple[np.ndarray, dict]:
    """Discriminator steps, then r_E + alpha * log D; falls back to r_E with no experts."""
    cfg = learner.cfg
    ag = learner.agents[n]
    r_ext = data["rewards"]
    stats = {"loss_disc": float("nan"), "intrinsic": 0.0}
    if not (cfg.discriminator_enabled and len(ag.expert) > 0):
        return r_ext, stats
    inputs = disc_inputs(data["obs"], data["flight"], data["alloc"])
    d_losses = []
    for _ in range(cfg.disc_steps):
        a_batch = inputs[learner.disc_rng.integers(0, inputs.shape[0], cfg.expert_batch)]
        e_batch = ag.expert.sample(cfg.expert_batch, learner.disc_rng)
        loss, _ = discriminator_update(ag.disc, ag.opt_disc, a_batch, e_batch,
                                       cfg.discriminator_loss)
        d_losses.append(loss)
    stats["loss_disc"] = float(np.mean(d_losses))
    if not np.isfinite(stats["loss_disc"]):
        raise FloatingPointError(f"agent {n}: non-finite discriminator loss")
    if cfg.intrinsic_scale == 0:
        return r_ext, stats
    r_int = intrinsic_reward(ag.disc, inputs)
    stats["intrinsic"] = float(np.mean(r_int))
    return mixed_reward(r_ext, r_int, cfg.intrinsic_scale), stats


def _policy_update(learner: Learner, n: int, data: dict, rewards, num_slots: int) -> dict:
    """GAE on ``rewards`` followed by minibatch epochs over both actor heads and the critic."""
    cfg = learner.cfg
    ag = learner.agents[n]
    scaled = (np.asarray(rewards) * cfg.reward_scale).reshape(-1, num_slots)
    values = data["values"].reshape(-1, num_slots)
    dones = np.zeros(num_slots, dtype=bool)
    dones[-1] = True
    adv = np.empty_like(scaled)
    ret = np.empty_like(scaled)
    for e in range(scaled.shape[0]):
        adv[e], ret[e] = compute_gae(scaled[e], values[e], dones, cfg.gamma, cfg.gae_lambda)
    adv = normalize(adv.ravel())
    ret = ret.ravel()

    pol = ag.policy
    lf, la, lc = [], [], []
    skipped = 0
    size = adv.shape[0]
    for _ in range(cfg.epochs):
        perm = learner.update_rng.permutation(size)
        for start in range(0, size, cfg.minibatch):
            idx = perm[start:start + cfg.minibatch]
            o = data["obs"][idx]
            loss, info = actor_update(pol.flight, ag.opt_flight, "gaussian", o,
                                      data["flight"][idx], data["logp_flight"][idx], adv[idx],
                                      cfg.clip_eps)
            lf.append(loss)
            skipped += info["skipped"]
            loss, info = actor_update(pol.alloc, ag.opt_alloc, "dirichlet", o,
                                      data["alloc"][idx], data["logp_alloc"][idx], adv[idx],
                                      cfg.clip_eps)
            la.append(loss)
            skipped += info["skipped"]
            lc.append(critic_update(pol.critic, ag.opt_critic, o, ret[idx]))
    stats = {"loss_flight": float(np.mean(lf)), "loss_alloc": float(np.mean(la)),
             "loss_critic": float(np.mean(lc)), "skipped": skipped}
    for k in ("loss_flight", "loss_alloc", "loss_critic"):
        if not np.isfinite(stats[k]):
            raise FloatingPointError(f"agent {n}: non-finite {k}")
    return stats


def _update_agent(learner: Learner, n: int, buffer: RolloutBuffer, num_slots: int) -> dict:
    data = buffer.agent_arrays(n)
    rewards, stats = _mixed_rewards(learner, n, data)
    stats.update(_policy_update(learner, n, data, rewards, num_slots))
    return stats


def _update_agent_ppo(learner: Learner, n: int, buffer: RolloutBuffer, num_slots: int) -> dict:
    data = buffer.agent_arrays(n)
    stats = {"loss_disc": float("nan"), "intrinsic": 0.0}
    stats.update(_policy_update(learner, n, data, data["rewards"], num_slots))
    return stats


def refresh_expert_buffers(learner: Learner, buffer: RolloutBuffer) -> None:
    for ep in buffer.episodes:
        for n, ag in enumerate(learner.agents):
            tuples = disc_inputs(ep.obs[n], ep.flight[n], ep.alloc[n])
            ag.expert.offer(tuples, float(ep.rewards[n].sum()))


def metrics_header(num_agents: int) -> list[str]:
    return (["episode", "update"] + [f"return_agent{n}" for n in range(num_agents)]
            + ["mean_return", "fairness", "delay_s", "energy_j", "offloaded",
               "loss_flight", "loss_alloc", "loss_critic", "loss_disc", "intrinsic"])


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


@dataclass
class TrainResult:
    learner: Learner
    rows: list[list[str]] = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(metrics_header(len(self.learner.agents)))
        w.writerows(self.rows)
        return buf.getvalue()


def train(cfg: TrainConfig, env_config: EnvConfig, seed: int, scenario: Scenario | None = None,
          out_dir=None, progress=None) -> TrainResult:
    """Run the full training loop; deterministic for a fixed (seed, configs, workers)."""
    return _run(cfg, env_config, seed, scenario, out_dir, progress, imitation=True)


def train_ppo(cfg: TrainConfig, env_config: EnvConfig, seed: int,
              scenario: Scenario | None = None, out_dir=None, progress=None) -> TrainResult:
    """Plain clipped-surrogate training: no discriminator, no expert buffer.

    ``cfg.discriminator_enabled`` and ``cfg.intrinsic_scale`` are ignored.
    """
    return _run(cfg, env_config, seed, scenario, out_dir, progress, imitation=False)


def _run(cfg, env_config, seed, scenario, out_dir, progress, imitation: bool) -> TrainResult:
    update_agent = _update_agent if imitation else _update_agent_ppo
    learner = Learner(env_config, cfg, seed)
    result = TrainResult(learner)
    num_slots = env_config.world.num_slots
    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.csv", "w", newline="")
        metrics_fh.write(f"# metrics-version {METRICS_VERSION}\n")
        csv.writer(metrics_fh, lineterminator="\n").writerow(
            metrics_header(env_config.world.num_uavs))
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    buffer = RolloutBuffer()
    try:
        update = 0
        for start in range(0, cfg.episodes, cfg.episodes_per_update):
            episodes = list(range(start, min(start + cfg.episodes_per_update, cfg.episodes)))
            buffer.extend(collect_rollouts(learner.snapshot(), env_config, scenario, seed,
                                           episodes, cfg.workers, pool))
            stats = [update_agent(learner, n, buffer, num_slots)
                     for n in range(len(learner.agents))]
            if imitation:
                refresh_expert_buffers(learner, buffer)
            mean_stat = {k: float(np.mean([s[k] for s in stats]))
                         for k in ("loss_flight", "loss_alloc", "loss_critic", "loss_disc",
                                   "intrinsic")}
            new_rows = []
            for ep in buffer.episodes:
                m = ep.metrics
                row = [ep.episode, update, *ep.returns, ep.returns.mean(), m.fairness, m.delay_s,
                       m.energy_j, m.offloaded, mean_stat["loss_flight"], mean_stat["loss_alloc"],
                       mean_stat["loss_critic"], mean_stat["loss_disc"], mean_stat["intrinsic"]]
                new_rows.append([_fmt(x) for x in row])
            result.rows.extend(new_rows)
            if metrics_fh is not None:
                csv.writer(metrics_fh, lineterminator="\n").writerows(new_rows)
                metrics_fh.flush()
            buffer.clear()
            update += 1
            if progress is not None:
                progress(update, new_rows)
            if out is not None and update % cfg.checkpoint_every == 0:
                learner.save(out / "checkpoints" / f"update_{update:05d}")
        if out is not None:
            learner.save(out / "checkpoints" / "final")
    finally:
        if pool is not None:
            pool.shutdown()
        if metrics_fh is not None:
            metrics_fh.close()
    return result
