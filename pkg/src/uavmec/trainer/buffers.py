from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..compute import EpisodeMetrics


@dataclass
class EpisodeRollout:
    """One episode of experience for all agents; arrays are indexed [agent, slot, ...].

    ``obs`` holds encoded network inputs. ``flight`` holds the raw Gaussian sample,
    ``alloc`` the Dirichlet sample.
    """

    episode: int
    obs: np.ndarray
    flight: np.ndarray
    alloc: np.ndarray
    logp_flight: np.ndarray
    logp_alloc: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    metrics: EpisodeMetrics
    offloads: np.ndarray

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    @property
    def num_transitions(self) -> int:
        return self.rewards.size


@dataclass
class RolloutBuffer:
    episodes: list[EpisodeRollout] = field(default_factory=list)

    def extend(self, eps) -> None:
        self.episodes.extend(eps)

    def clear(self) -> None:
        self.episodes.clear()

    def __len__(self) -> int:
        return sum(e.num_transitions for e in self.episodes)

    def agent_arrays(self, n: int) -> dict[str, np.ndarray]:
        """Flattened (episodes * T, ...) arrays of agent ``n``, episodes in order."""
        keys = ("obs", "flight", "alloc", "logp_flight", "logp_alloc", "rewards", "values")
        return {k: np.concatenate([getattr(e, k)[n] for e in self.episodes]) for k in keys}


def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalised advantage estimates and value targets for one trajectory.

    ``dones[t]`` marks that no bootstrap happens after step ``t``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = rewards.shape[0]
    adv = np.zeros(n)
    running = 0.0
    next_value = last_value
    for t in reversed(range(n)):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalize(x, eps: float = 1e-8):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return x - x.mean()
    return (x - x.mean()) / (x.std() + eps)


@dataclass
class ExpertBuffer:
    """Self-imitation store of whole high-return episodes for one agent.

    Admission: always while below capacity, otherwise only if the episode
    return beats the median stored return; the lowest-return episode is then
    evicted.
    """

    capacity: int = 20
    returns: list[float] = field(default_factory=list)
    tuples: list[np.ndarray] = field(default_factory=list)
    evicted: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.returns)

    @property
    def num_tuples(self) -> int:
        return sum(t.shape[0] for t in self.tuples)

    def offer(self, tuples: np.ndarray, episode_return: float) -> bool:
        if len(self.returns) < self.capacity:
            self.returns.append(float(episode_return))
            self.tuples.append(tuples)
            return True
        if episode_return <= float(np.median(self.returns)):
            return False
        worst = int(np.argmin(self.returns))
        self.evicted.append(self.returns.pop(worst))
        self.tuples.pop(worst)
        self.returns.append(float(episode_return))
        self.tuples.append(tuples)
        return True

    def sample(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        data = np.concatenate(self.tuples)
        return data[rng.integers(0, data.shape[0], size=batch)]


def update_expert_buffer(buffer: ExpertBuffer, tuples, episode_return: float) -> ExpertBuffer:
    buffer.offer(np.asarray(tuples, dtype=float), episode_return)
    return buffer
