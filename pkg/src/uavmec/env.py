"""Multi-UAV MEC environment: observations, action decoding, slot transition and rewards."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .channel import ChannelParams, channel_gain, spectral_efficiency
from .compute import EpisodeMetrics, SlotMetrics, accumulate_objectives
from .world import (RotorParams, WorldConfig, WorldState, advance_uav, associate,
                    generate_task_arrays, propulsion_power)

TWO_PI = 2.0 * math.pi


class EnvFault(RuntimeError):
    """The environment received input it cannot act on (non-finite action, finished episode)."""


@dataclass(frozen=True)
class RewardWeights:
    offload: float = 100.0
    num: float = 5.0
    res: float = 20.0
    move: float = 20.0
    comp: float = 10.0
    u2u: float = 1.0

    def scaled(self, c: float) -> RewardWeights:
        return RewardWeights(*(c * getattr(self, f.name) for f in fields(self)))


@dataclass(frozen=True)
class RewardUnits:
    """Divisors that convert each raw sub-reward into reward units.

    ``None`` picks the natural reference from the config: S * log2(1 + SNR
    at nadir) for offload, S for num, f_max for res, hover energy P(0) * tau
    for move, the energy of S mean tasks sharing f_max evenly for comp, and
    (N - 1) * L for u2u.
    """

    offload: float | None = None
    num: float | None = None
    res: float | None = None
    move: float | None = None
    comp: float | None = None
    u2u: float | None = None


@dataclass(frozen=True)
class Scenario:
    """Fixed SD layout with an optional per-slot task schedule of shape (T, M, 3)."""

    sd_xy: np.ndarray
    tasks: np.ndarray | None = None

    @classmethod
    def load(cls, path) -> Scenario:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        sd_xy = np.asarray(raw["sd_positions_m"], dtype=float)
        tasks = raw.get("tasks")
        if tasks is not None:
            tasks = np.asarray(tasks, dtype=float)
        return cls(sd_xy, tasks)

    def dump(self, path) -> None:
        doc = {"sd_positions_m": self.sd_xy.tolist()}
        if self.tasks is not None:
            doc["tasks"] = self.tasks.tolist()
        with open(path, "w") as fh:
            yaml.safe_dump(doc, fh)


@dataclass(frozen=True)
class EnvConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    rotor: RotorParams = field(default_factory=RotorParams)
    weights: RewardWeights = field(default_factory=RewardWeights)
    units: RewardUnits = field(default_factory=RewardUnits)
    observed_sds: int = 10

    def __post_init__(self):
        if self.observed_sds < 1:
            raise ValueError("observed_sds must be >= 1")

    @property
    def obs_dim(self) -> int:
        return 3 + 5 * self.observed_sds + 3 * self.world.num_peer_uavs

    def resolved_units(self) -> dict[str, float]:
        w, ch = self.world, self.channel
        nadir_se = float(spectral_efficiency(channel_gain(0.0, w.altitude_m, ch), ch))
        mean_cycles = (np.mean(w.task_size_bits) * np.mean(w.task_intensity_cycles_per_bit))
        share = w.uav_cpu_hz / w.max_served_sds
        defaults = {
            "offload": w.max_served_sds * nadir_se,
            "num": float(w.max_served_sds),
            "res": w.uav_cpu_hz,
            "move": float(propulsion_power(0.0, self.rotor)) * w.slot_duration_s,
            "comp": w.max_served_sds * w.cpu_capacitance * share * share * mean_cycles,
            "u2u": max(w.num_uavs - 1, 1) * w.area_side_m,
        }
        out = {}
        for k, v in defaults.items():
            given = getattr(self.units, k)
            out[k] = float(v if given is None else given)
            if not out[k] > 0:
                raise ValueError(f"reward unit for {k} must be > 0")
        return out


@dataclass(frozen=True)
class Action:
    theta: float
    distance: float
    alloc: np.ndarray


@dataclass(frozen=True)
class RewardBreakdown:
    offload: float
    num: float
    res: float
    move: float
    comp: float
    u2u: float
    extrinsic: float

    @classmethod
    def combine(cls, weights: RewardWeights, offload, num, res, move, comp, u2u):
        total = (weights.offload * offload + weights.num * num + weights.res * res
                 - weights.move * move - weights.comp * comp + weights.u2u * u2u)
        return cls(offload, num, res, move, comp, u2u, total)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class StepResult:
    observations: list[np.ndarray]
    rewards: list[RewardBreakdown]
    metrics: SlotMetrics
    done: bool
    served: list[list[int]]
    completed: list[list[bool]]


@dataclass
class ConstraintReport:
    position_in_area: bool
    position_in_subregion: bool
    heading_in_range: bool
    distance_in_range: bool
    allocation_in_range: bool
    allocation_within_capacity: bool
    deadlines_met: bool
    violations: list[str]

    @property
    def structural_ok(self) -> bool:
        """Everything except deadlines, which are outcomes rather than action constraints."""
        return (self.position_in_area and self.position_in_subregion and self.heading_in_range
                and self.distance_in_range and self.allocation_in_range
                and self.allocation_within_capacity)


def decode_action(raw_flight, alloc, config: EnvConfig) -> Action:
    """Map unbounded flight outputs through tanh onto [0, 2pi] x [0, d_max].

    ``alloc`` must already lie on the simplex.
    """
    raw_flight = np.asarray(raw_flight, dtype=float)
    alloc = np.asarray(alloc, dtype=float)
    if not (np.all(np.isfinite(raw_flight)) and np.all(np.isfinite(alloc))):
        raise EnvFault(f"non-finite policy output: flight={raw_flight}, alloc={alloc}")
    if alloc.shape != (config.world.max_served_sds,):
        raise EnvFault(f"allocation must have {config.world.max_served_sds} components")
    squashed = np.tanh(raw_flight)
    theta = math.pi * (1.0 + float(squashed[0]))
    distance = 0.5 * config.world.max_flight_distance_m * (1.0 + float(squashed[1]))
    return Action(min(max(theta, 0.0), TWO_PI),
                  min(max(distance, 0.0), config.world.max_flight_distance_m), alloc)


def _bearing(dx, dy):
    ang = np.mod(np.arctan2(dy, dx), TWO_PI)
    return np.where(ang >= TWO_PI, 0.0, ang)


def region_members(config: EnvConfig, sd_region: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(sd_region == n) for n in range(config.world.num_uavs)]


def build_observation(config: EnvConfig, state: WorldState, n: int,
                      members: list[np.ndarray] | None = None) -> np.ndarray:
    """Raw (unnormalised) observation vector of agent ``n``.

    Layout: own (x, y, z); per observed SD (bearing, distance, offload count,
    required CPU rate, valid); per peer UAV (bearing, distance, valid).
    """
    w = config.world
    if members is None:
        members = region_members(config, state.sd_region)
    k_sd, q = config.observed_sds, w.num_peer_uavs
    out = np.zeros(config.obs_dim)
    pos = state.uav_xy[n]
    out[0], out[1], out[2] = pos[0], pos[1], w.altitude_m

    ids = members[n]
    if ids.size:
        diff = state.sd_xy[ids] - pos
        dist = np.hypot(diff[:, 0], diff[:, 1])
        order = np.lexsort((ids, dist))[:k_sd]
        sel = ids[order]
        k = sel.size
        block = np.empty((k, 5))
        block[:, 0] = _bearing(diff[order, 0], diff[order, 1])
        block[:, 1] = dist[order]
        block[:, 2] = state.offloads[sel]
        block[:, 3] = state.task_size[sel] * state.task_intensity[sel] / state.task_deadline[sel]
        block[:, 4] = 1.0
        out[3:3 + 5 * k] = block.ravel()

    if q:
        others = np.array([k for k in range(w.num_uavs) if k != n])
        diff = state.uav_xy[others] - pos
        dist = np.hypot(diff[:, 0], diff[:, 1])
        order = np.lexsort((others, dist))[:q]
        block = np.empty((order.size, 3))
        block[:, 0] = _bearing(diff[order, 0], diff[order, 1])
        block[:, 1] = dist[order]
        block[:, 2] = 1.0
        base = 3 + 5 * k_sd
        out[base:base + 3 * order.size] = block.ravel()
    return out


def observation_scale(config: EnvConfig) -> np.ndarray:
    """Per-feature divisors that bring raw observations to roughly unit range."""
    w = config.world
    cw, ch = w.cell_size
    sd = [TWO_PI, math.hypot(cw, ch), float(w.num_slots), w.uav_cpu_hz, 1.0]
    peer = [TWO_PI, w.area_side_m * math.sqrt(2.0), 1.0]
    scale = [w.area_side_m, w.area_side_m, w.altitude_m]
    scale += sd * config.observed_sds + peer * w.num_peer_uavs
    return np.asarray(scale, dtype=float)


def _flight(config: EnvConfig, state: WorldState, actions: list[Action]):
    w = config.world
    new_xy = np.empty_like(state.uav_xy)
    for n, a in enumerate(actions):
        new_xy[n] = advance_uav(state.uav_xy[n], a.theta, a.distance, w.region(n),
                                w.max_flight_distance_m)
    return new_xy


def _serve(config: EnvConfig, state: WorldState, uav_pos, served: list[int], alloc):
    """Per-task (spectral efficiency, cpu share, delay, completed, energy) for one UAV."""
    w, ch = config.world, config.channel
    ids = np.asarray(served, dtype=int)
    diff = state.sd_xy[ids] - uav_pos
    h = np.hypot(diff[:, 0], diff[:, 1])
    se = spectral_efficiency(channel_gain(h, w.altitude_m, ch), ch)
    se = np.atleast_1d(se)
    rate = ch.bandwidth_hz * se
    f = np.asarray(alloc[:ids.size], dtype=float) * w.uav_cpu_hz
    size, cyc = state.task_size[ids], state.task_intensity[ids]
    tx = np.divide(size, rate, out=np.full(ids.size, np.inf), where=rate > 0)
    comp = np.divide(size * cyc, f, out=np.full(ids.size, np.inf), where=f > 0)
    delay = tx + comp
    done = delay <= state.task_deadline[ids]
    # unservable tasks still spend their uplink time
    accrued = np.where(np.isfinite(delay), delay, tx)
    energy = w.cpu_capacitance * f * f * size * cyc
    return se, f, accrued, done, energy


class MecEnv:
    """One episode-at-a-time simulator; not thread-safe, cheap to clone."""

    def __init__(self, config: EnvConfig, scenario: Scenario | None = None):
        self.config = config
        self.scenario = scenario
        self.units = config.resolved_units()
        self.state: WorldState | None = None
        self.rng: np.random.Generator | None = None
        self.members: list[np.ndarray] = []
        self.history: list[SlotMetrics] = []
        if scenario is not None:
            w = config.world
            if scenario.sd_xy.shape != (w.num_sds, 2):
                raise ValueError(f"scenario has {scenario.sd_xy.shape[0]} SDs, config expects "
                                 f"{w.num_sds}")
            if scenario.tasks is not None and scenario.tasks.shape != (w.num_slots, w.num_sds, 3):
                raise ValueError("scenario task schedule must have shape (T, M, 3)")

    def clone(self) -> MecEnv:
        other = copy.copy(self)
        other.state = self.state.copy()
        other.rng = copy.deepcopy(self.rng)
        other.history = list(self.history)
        return other

    def _load_tasks(self, t: int):
        w = self.config.world
        s = self.state
        if self.scenario is not None and self.scenario.tasks is not None:
            sched = self.scenario.tasks[t - 1]
            s.task_size, s.task_intensity, s.task_deadline = (sched[:, 0].copy(),
                                                              sched[:, 1].copy(),
                                                              sched[:, 2].copy())
        else:
            s.task_size, s.task_intensity, s.task_deadline = generate_task_arrays(
                self.rng, w.num_sds, w.task_size_bits, w.task_intensity_cycles_per_bit,
                w.task_deadline_s)

    def reset(self, rng: np.random.Generator) -> list[np.ndarray]:
        w = self.config.world
        self.rng = rng
        if self.scenario is not None:
            sd_xy = self.scenario.sd_xy.copy()
        else:
            sd_xy = rng.uniform(0.0, w.area_side_m, size=(w.num_sds, 2))
        sd_xy.setflags(write=False)
        sd_region = w.region_of(sd_xy)
        sd_region.setflags(write=False)
        uav_xy = np.array([w.region_center(n) for n in range(w.num_uavs)])
        empty = np.zeros(0)
        self.state = WorldState(uav_xy, sd_xy, sd_region, empty, empty, empty,
                                np.zeros(w.num_sds, dtype=int), t=1,
                                uav_speed=np.zeros(w.num_uavs))
        self.members = region_members(self.config, sd_region)
        self.history = []
        self._load_tasks(1)
        return self.observations()

    def observations(self) -> list[np.ndarray]:
        return [build_observation(self.config, self.state, n, self.members)
                for n in range(self.config.world.num_uavs)]

    def served_sets(self) -> list[list[int]]:
        w = self.config.world
        return [associate(self.state.uav_xy[n], self.members[n], self.state.sd_xy,
                          w.coverage_radius_m, w.max_served_sds) for n in range(w.num_uavs)]

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.t > self.config.world.num_slots

    def step(self, actions: list[Action]) -> StepResult:
        cfg, w, s = self.config, self.config.world, self.state
        if s is None:
            raise EnvFault("step() before reset()")
        if self.done:
            raise EnvFault("episode already finished")
        if len(actions) != w.num_uavs:
            raise EnvFault(f"expected {w.num_uavs} actions, got {len(actions)}")
        for a in actions:
            if not (math.isfinite(a.theta) and math.isfinite(a.distance)
                    and np.all(np.isfinite(a.alloc))):
                raise EnvFault(f"non-finite action {a}")

        s.uav_xy = _flight(cfg, s, actions)
        s.uav_speed = np.array([a.distance / w.slot_duration_s for a in actions])
        served = self.served_sets()

        u = self.units
        move_energy = propulsion_power(s.uav_speed, cfg.rotor) * w.slot_duration_s
        pair = np.hypot(*(s.uav_xy[:, None, :] - s.uav_xy[None, :, :]).transpose(2, 0, 1))
        rewards, completed = [], []
        fairness_sum = delay_sum = comp_energy_sum = 0.0
        count = 0
        for n, a in enumerate(actions):
            ids = served[n]
            if ids:
                se, f, delay, ok, energy = _serve(cfg, s, s.uav_xy[n], ids, a.alloc)
                idx = np.asarray(ids)
                s.offloads[idx[ok]] += 1
                fair = 1.0 - w.fairness_scale * s.offloads[idx] / w.num_slots
                r_off = float(np.sum(fair * se))
                r_res = float(np.sum(f[ok]))
                r_comp = float(np.sum(energy))
                fairness_sum += float(np.sum(fair))
                delay_sum += float(np.sum(delay))
                comp_energy_sum += r_comp
                count += int(np.sum(ok))
                completed.append([bool(x) for x in ok])
            else:
                r_off = r_res = r_comp = 0.0
                completed.append([])
            r_u2u = float(np.sum(pair[n]))
            rewards.append(RewardBreakdown.combine(
                cfg.weights,
                offload=r_off / u["offload"],
                num=len(ids) / u["num"],
                res=r_res / u["res"],
                move=float(move_energy[n]) / u["move"],
                comp=r_comp / u["comp"],
                u2u=r_u2u / u["u2u"],
            ))

        metrics = SlotMetrics(fairness=fairness_sum, delay_s=delay_sum,
                              energy_j=float(np.sum(move_energy)) + comp_energy_sum,
                              offloaded=count)
        self.history.append(metrics)
        s.t += 1
        if not self.done:
            self._load_tasks(s.t)
        return StepResult(self.observations(), rewards, metrics, self.done, served, completed)

    def episode_metrics(self) -> EpisodeMetrics:
        return accumulate_objectives(self.history)


def check_constraints(config: EnvConfig, state: WorldState, actions: list[Action],
                      deadlines: bool = True) -> ConstraintReport:
    """Audit one slot's actions against the problem constraints without mutating ``state``.

    Runtime enforcement is by construction; this exists for tests and oracles.
    ``deadlines=False`` skips the (outcome) deadline audit and reports it as met.
    """
    w = config.world
    tol = 1e-9
    v: list[str] = []
    heading = distance = alloc_rng = alloc_cap = True
    for n, a in enumerate(actions):
        if not 0.0 <= a.theta <= TWO_PI:
            heading = False
            v.append(f"uav {n}: heading {a.theta} outside [0, 2pi]")
        if not 0.0 <= a.distance <= w.max_flight_distance_m:
            distance = False
            v.append(f"uav {n}: distance {a.distance} outside [0, {w.max_flight_distance_m}]")
        f = np.asarray(a.alloc) * w.uav_cpu_hz
        if np.any(f < 0) or np.any(f > w.uav_cpu_hz * (1 + tol)):
            alloc_rng = False
            v.append(f"uav {n}: per-SD CPU share outside [0, f_max]")
        if np.sum(f) > w.uav_cpu_hz * (1 + tol):
            alloc_cap = False
            v.append(f"uav {n}: total CPU share {np.sum(f)} exceeds f_max")

    in_area = in_region = True
    audit_deadlines, deadlines = deadlines, True
    if heading and distance:
        xy = _flight(config, state, actions)
        for n in range(w.num_uavs):
            x, y = xy[n]
            if not (0 <= x <= w.area_side_m and 0 <= y <= w.area_side_m):
                in_area = False
                v.append(f"uav {n}: position ({x}, {y}) outside the area")
            x0, y0, x1, y1 = w.region(n)
            if not (x0 <= x <= x1 and y0 <= y <= y1):
                in_region = False
                v.append(f"uav {n}: position ({x}, {y}) outside its sub-region")
        members = region_members(config, state.sd_region) if audit_deadlines else []
        for n, a in enumerate(actions if audit_deadlines else []):
            ids = associate(xy[n], members[n], state.sd_xy, w.coverage_radius_m,
                            w.max_served_sds)
            if not ids:
                continue
            _, f, delay, ok, _ = _serve(config, state, xy[n], ids, a.alloc)
            for m, fm, dm, okm in zip(ids, f, delay, ok):
                if not okm:
                    deadlines = False
                    f_min = state.task_size[m] * state.task_intensity[m] / state.task_deadline[m]
                    v.append(f"uav {n} -> sd {m}: delay {dm:.6g}s > deadline "
                             f"{state.task_deadline[m]:.6g}s (cpu {fm:.6g} Hz, "
                             f"cpu floor {f_min:.6g} Hz)")
    return ConstraintReport(in_area, in_region, heading, distance, alloc_rng, alloc_cap,
                            deadlines, v)


def trace_record(episode: int, slot: int, agent: int, position, action: Action,
                 reward: RewardBreakdown, served: list[int]) -> str:
    rec = {
        "episode": episode,
        "slot": slot,
        "agent": agent,
        "x_m": float(position[0]),
        "y_m": float(position[1]),
        "theta_rad": action.theta,
        "distance_m": action.distance,
        "alloc": [float(x) for x in action.alloc],
        "reward": reward.as_dict(),
        "served": served,
    }
    return json.dumps(rec, sort_keys=True)
