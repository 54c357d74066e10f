"""Non-learned reference policies and an exhaustive single-slot oracle."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .env import TWO_PI, Action, EnvConfig, MecEnv
from .world import advance_uav, associate


class PolicyKind(str, enum.Enum):
    RANDOM = "random"
    GREEDY = "greedy"
    CHECKPOINT = "checkpoint"


def random_policy(config: EnvConfig, rng: np.random.Generator) -> Action:
    w = config.world
    return Action(float(rng.uniform(0.0, TWO_PI)),
                  float(rng.uniform(0.0, w.max_flight_distance_m)),
                  rng.dirichlet(np.ones(w.max_served_sds)))


def greedy_policy(env: MecEnv, n: int) -> Action:
    """Head for the centroid of the least-served SDs in the own sub-region.

    Targets are the ``observed_sds`` SDs with the lowest offload count (nearer
    first, then lower index). The CPU is split evenly over the SDs that will
    be served from the reached position.
    """
    cfg, w, s = env.config, env.config.world, env.state
    pos = s.uav_xy[n]
    ids = env.members[n]
    s_max = w.max_served_sds
    if ids.size == 0:
        return Action(0.0, 0.0, np.full(s_max, 1.0 / s_max))
    diff = s.sd_xy[ids] - pos
    dist = np.hypot(diff[:, 0], diff[:, 1])
    order = np.lexsort((ids, dist, s.offloads[ids]))[:cfg.observed_sds]
    target = s.sd_xy[ids[order]].mean(axis=0)
    dx, dy = target - pos
    gap = math.hypot(dx, dy)
    theta = math.atan2(dy, dx) % TWO_PI if gap > 0 else 0.0
    d = min(gap, w.max_flight_distance_m)
    nxt = advance_uav(pos, theta, d, w.region(n), w.max_flight_distance_m)
    k = len(associate(nxt, ids, s.sd_xy, w.coverage_radius_m, s_max))
    alloc = np.zeros(s_max)
    if k:
        alloc[:k] = 1.0 / k
    else:
        alloc[:] = 1.0 / s_max
    return Action(theta, d, alloc)


def random_actor(env: MecEnv, observations, rng):
    return [random_policy(env.config, rng) for _ in range(env.config.world.num_uavs)]


def greedy_actor(env: MecEnv, observations, rng):
    return [greedy_policy(env, n) for n in range(env.config.world.num_uavs)]


def simplex_lattice(parts: int, denominator: int) -> np.ndarray:
    """All points of the (parts - 1)-simplex with coordinates k / denominator."""
    pts = []
    for cuts in itertools.combinations(range(denominator + parts - 1), parts - 1):
        prev, comp = -1, []
        for c in cuts:
            comp.append(c - prev - 1)
            prev = c
        comp.append(denominator + parts - 1 - prev - 1)
        pts.append(comp)
    return np.asarray(pts, dtype=float) / denominator


@dataclass
class OracleResult:
    action: Action
    reward: float
    evaluated: list[tuple[Action, float]]


def oracle_actions(config: EnvConfig, n_theta: int = 32, n_dist: int = 16, denominator: int = 4):
    if n_theta < 2 or n_dist < 2 or denominator < 1:
        raise ValueError("oracle grid too coarse: need >= 2 points per axis")
    thetas = TWO_PI * np.arange(n_theta) / n_theta
    dists = np.linspace(0.0, config.world.max_flight_distance_m, n_dist)
    allocs = simplex_lattice(config.world.max_served_sds, denominator)
    for th, d, a in itertools.product(thetas, dists, allocs):
        yield Action(float(th), float(d), a)


def brute_force_step_oracle(env: MecEnv, n: int, n_theta: int = 32, n_dist: int = 16,
                            denominator: int = 4, others: list[Action] | None = None,
                            max_evaluations: int = 250_000, keep: bool = False) -> OracleResult:
    """Best one-slot action of agent ``n`` over a lattice, scored by the real env step.

    Other agents hover with an even split unless ``others`` is given. Ties
    keep the first lattice point.
    """
    w = env.config.world
    count = n_theta * n_dist * math.comb(denominator + w.max_served_sds - 1,
                                         w.max_served_sds - 1)
    if count > max_evaluations:
        raise ValueError(f"oracle lattice has {count} points, cap is {max_evaluations}")
    if others is None:
        hover = Action(0.0, 0.0, np.full(w.max_served_sds, 1.0 / w.max_served_sds))
        others = [hover] * w.num_uavs
    best, best_r = None, -math.inf
    evaluated = []
    for a in oracle_actions(env.config, n_theta, n_dist, denominator):
        acts = list(others)
        acts[n] = a
        r = env.clone().step(acts).rewards[n].extrinsic
        if keep:
            evaluated.append((a, r))
        if r > best_r:
            best, best_r = a, r
    return OracleResult(best, best_r, evaluated)
