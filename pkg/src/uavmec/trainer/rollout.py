"""Episode execution, parallel rollout collection and frozen-policy evaluation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..compute import EpisodeMetrics
from ..env import EnvConfig, MecEnv, Scenario, decode_action, trace_record
from ..nn import (Mlp, dirichlet_concentration, dirichlet_log_prob, dirichlet_mean,
                  dirichlet_sample, gaussian_log_prob, gaussian_sample)
from .buffers import EpisodeRollout
from .features import ObservationEncoder

# spawn-key roots that keep auxiliary streams disjoint from per-episode streams
EVAL_STREAM = 1 << 40
INIT_STREAM = (1 << 40) + 1
UPDATE_STREAM = (1 << 40) + 2
DISC_STREAM = (1 << 40) + 3


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def episode_rngs(seed: int, episode: int, root: int | None = None):
    """Independent (env, policy) generators for one episode."""
    key = (episode,) if root is None else (root, episode)
    env_ss, pol_ss = np.random.SeedSequence(seed, spawn_key=key).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(pol_ss)


@dataclass
class AgentPolicy:
    flight: Mlp
    alloc: Mlp
    critic: Mlp

    def act(self, obs, rng: np.random.Generator, deterministic: bool = False):
        """Return (raw flight sample, allocation, log p flight, log p alloc, value)."""
        mean = self.flight(obs)[0]
        log_std = self.flight.params["log_std"]
        conc = self.alloc(obs)[0]
        if deterministic:
            u, x = mean, dirichlet_mean(conc)
        else:
            u = gaussian_sample(mean, log_std, rng)
            x = dirichlet_sample(conc, rng)
        lp1 = float(gaussian_log_prob(mean, log_std, u))
        lp2 = float(dirichlet_log_prob(conc, x))
        value = float(self.critic(obs)[0])
        return u, x, lp1, lp2, value


@dataclass
class PolicySnapshot:
    agents: list[AgentPolicy]
    encoder: ObservationEncoder


def make_policy(config: EnvConfig, rng: np.random.Generator, hidden=(64, 64)) -> PolicySnapshot:
    encoder = ObservationEncoder.for_config(config)
    d, s = encoder.dim, config.world.max_served_sds
    agents = [AgentPolicy(Mlp(d, 2, "gaussian", hidden, rng),
                          Mlp(d, s, "dirichlet", hidden, rng),
                          Mlp(d, 1, "value", hidden, rng, out_gain=1.0))
              for _ in range(config.world.num_uavs)]
    return PolicySnapshot(agents, encoder)


def run_learning_episode(snapshot: PolicySnapshot, config: EnvConfig, scenario: Scenario | None,
                         seed: int, episode: int) -> EpisodeRollout:
    env_rng, pol_rng = episode_rngs(seed, episode)
    env = MecEnv(config, scenario)
    raw_obs = env.reset(env_rng)
    w = config.world
    n_ag, t_max, s = w.num_uavs, w.num_slots, w.max_served_sds
    obs = np.zeros((n_ag, t_max, snapshot.encoder.dim))
    flight = np.zeros((n_ag, t_max, 2))
    alloc = np.zeros((n_ag, t_max, s))
    lp1 = np.zeros((n_ag, t_max))
    lp2 = np.zeros((n_ag, t_max))
    rew = np.zeros((n_ag, t_max))
    val = np.zeros((n_ag, t_max))
    for t in range(t_max):
        actions = []
        for n, agent in enumerate(snapshot.agents):
            o = snapshot.encoder(raw_obs[n])
            u, x, a, b, v = agent.act(o, pol_rng)
            obs[n, t], flight[n, t], alloc[n, t] = o, u, x
            lp1[n, t], lp2[n, t], val[n, t] = a, b, v
            actions.append(decode_action(u, x, config))
        res = env.step(actions)
        rew[:, t] = [r.extrinsic for r in res.rewards]
        raw_obs = res.observations
    return EpisodeRollout(episode, obs, flight, alloc, lp1, lp2, rew, val,
                          env.episode_metrics(), env.state.offloads.copy())


def _worker(args):
    snapshot, config, scenario, seed, episodes = args
    return [run_learning_episode(snapshot, config, scenario, seed, e) for e in episodes]


def partition(episodes: list[int], workers: int) -> list[list[int]]:
    """Contiguous, order-preserving split of ``episodes`` into ``workers`` chunks."""
    size = math.ceil(len(episodes) / workers) if episodes else 0
    return [episodes[i * size:(i + 1) * size] for i in range(workers)]


def collect_rollouts(snapshot: PolicySnapshot, config: EnvConfig, scenario: Scenario | None,
                     seed: int, episodes: list[int], workers: int = 1,
                     pool: ProcessPoolExecutor | None = None) -> list[EpisodeRollout]:
    """Run ``episodes`` under a frozen snapshot; results come back in episode order.

    Every episode draws from its own seed stream, so the merged result does
    not depend on how episodes are spread over workers.
    """
    chunks = [c for c in partition(list(episodes), max(workers, 1)) if c]
    jobs = [(snapshot, config, scenario, seed, c) for c in chunks]
    if pool is None or len(jobs) <= 1:
        results = [_worker(j) for j in jobs]
    else:
        futures = [pool.submit(_worker, j) for j in jobs]
        results = []
        for i, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except Exception as exc:
                raise RuntimeError(f"rollout worker {i} failed on episodes {chunks[i]}") from exc
    return [ep for chunk in results for ep in chunk]


@dataclass
class EvalEpisode:
    episode: int
    returns: np.ndarray
    metrics: EpisodeMetrics
    offloads: np.ndarray
    trace: list[str]


def learned_actor(snapshot: PolicySnapshot, deterministic: bool = True):
    def policy(env: MecEnv, observations, rng):
        out = []
        for n, agent in enumerate(snapshot.agents):
            u, x, *_ = agent.act(snapshot.encoder(observations[n]), rng, deterministic)
            out.append(decode_action(u, x, env.config))
        return out
    return policy


def evaluate(policy, config: EnvConfig, scenario: Scenario | None, seed: int, episodes: int,
             trace: bool = False) -> list[EvalEpisode]:
    """Roll ``policy(env, observations, rng) -> actions`` over evaluation episodes.

    Evaluation episodes use their own seed streams, so every policy evaluated
    with the same seed faces the same SD layouts and task sequences.
    """
    out = []
    for e in range(episodes):
        env_rng, pol_rng = episode_rngs(seed, e, root=EVAL_STREAM)
        env = MecEnv(config, scenario)
        obs = env.reset(env_rng)
        returns = np.zeros(config.world.num_uavs)
        lines = []
        while not env.done:
            slot = env.state.t
            actions = policy(env, obs, pol_rng)
            res = env.step(actions)
            returns += [r.extrinsic for r in res.rewards]
            if trace:
                for n, a in enumerate(actions):
                    lines.append(trace_record(e, slot, n, env.state.uav_xy[n], a,
                                              res.rewards[n], res.served[n]))
            obs = res.observations
        out.append(EvalEpisode(e, returns, env.episode_metrics(), env.state.offloads.copy(),
                               lines))
    return out
