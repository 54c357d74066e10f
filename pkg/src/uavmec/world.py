"""Service area geometry, UAV kinematics, rotary-wing propulsion power and task generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class WorldConfig:
    area_side_m: float = 1000.0
    altitude_m: float = 120.0
    num_uavs: int = 4
    num_sds: int = 100
    num_slots: int = 30
    slot_duration_s: float = 5.0
    max_flight_distance_m: float = 150.0
    coverage_radius_m: float = 250.0
    max_served_sds: int = 5
    uav_cpu_hz: float = 20e9
    cpu_capacitance: float = 1e-28
    fairness_scale: float = 1.0
    grid_rows: int = 2
    grid_cols: int = 2
    num_peer_uavs: int = 3
    task_size_bits: tuple[float, float] = (1e6, 5e6)
    task_intensity_cycles_per_bit: tuple[float, float] = (500.0, 1500.0)
    task_deadline_s: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        checks = [
            (self.area_side_m > 0, "area_side_m must be > 0"),
            (self.altitude_m > 0, "altitude_m must be > 0"),
            (self.num_uavs >= 1, "num_uavs must be >= 1"),
            (self.num_sds >= 1, "num_sds must be >= 1"),
            (self.num_slots >= 1, "num_slots must be >= 1"),
            (self.slot_duration_s > 0, "slot_duration_s must be > 0"),
            (self.max_flight_distance_m > 0, "max_flight_distance_m must be > 0"),
            (self.coverage_radius_m > 0, "coverage_radius_m must be > 0"),
            (self.max_served_sds >= 1, "max_served_sds must be >= 1"),
            (self.uav_cpu_hz > 0, "uav_cpu_hz must be > 0"),
            (self.cpu_capacitance >= 0, "cpu_capacitance must be >= 0"),
            (0 <= self.fairness_scale <= 1, "fairness_scale must lie in [0, 1]"),
            (self.grid_rows * self.grid_cols == self.num_uavs,
             "grid_rows * grid_cols must equal num_uavs"),
            (0 <= self.num_peer_uavs <= self.num_uavs - 1,
             "num_peer_uavs must lie in [0, num_uavs - 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        for name in ("task_size_bits", "task_intensity_cycles_per_bit", "task_deadline_s"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < min <= max, got ({lo}, {hi})")

    @property
    def max_speed(self) -> float:
        return self.max_flight_distance_m / self.slot_duration_s

    @property
    def cell_size(self) -> tuple[float, float]:
        return self.area_side_m / self.grid_cols, self.area_side_m / self.grid_rows

    def region(self, n: int) -> tuple[float, float, float, float]:
        """Rectangle (x_lo, y_lo, x_hi, y_hi) of the sub-region owned by UAV ``n``."""
        w, h = self.cell_size
        row, col = divmod(n, self.grid_cols)
        return col * w, row * h, (col + 1) * w, (row + 1) * h

    def region_center(self, n: int) -> np.ndarray:
        x0, y0, x1, y1 = self.region(n)
        return np.array([(x0 + x1) / 2, (y0 + y1) / 2])

    def region_of(self, xy: np.ndarray) -> np.ndarray:
        """Index of the sub-region containing each point (rows of ``xy``)."""
        xy = np.atleast_2d(xy)
        w, h = self.cell_size
        col = np.clip(np.floor(xy[:, 0] / w), 0, self.grid_cols - 1).astype(int)
        row = np.clip(np.floor(xy[:, 1] / h), 0, self.grid_rows - 1).astype(int)
        return row * self.grid_cols + col


@dataclass(frozen=True)
class RotorParams:
    blade_profile_power_w: float = 79.8563
    induced_power_w: float = 88.6279
    tip_speed_mps: float = 120.0
    induced_velocity_mps: float = 4.03
    fuselage_drag_ratio: float = 0.6
    air_density_kgpm3: float = 1.225
    rotor_solidity: float = 0.05
    rotor_disc_area_m2: float = 0.503

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")


@dataclass(frozen=True)
class TaskSpec:
    size_bits: float
    cycles_per_bit: float
    deadline_s: float

    def __post_init__(self):
        if not (self.size_bits > 0 and self.cycles_per_bit > 0 and self.deadline_s > 0):
            raise ValueError(f"task fields must be positive: {self}")

    @property
    def cycles(self) -> float:
        return self.size_bits * self.cycles_per_bit


@dataclass
class WorldState:
    """Mutable state owned by a single environment instance.

    Tasks are kept as three parallel arrays (size, intensity, deadline) for
    vectorised evaluation; ``task(m)`` rebuilds a TaskSpec.
    """

    uav_xy: np.ndarray
    sd_xy: np.ndarray
    sd_region: np.ndarray
    task_size: np.ndarray
    task_intensity: np.ndarray
    task_deadline: np.ndarray
    offloads: np.ndarray
    t: int = 1
    uav_speed: np.ndarray = field(default=None)

    def task(self, m: int) -> TaskSpec:
        return TaskSpec(float(self.task_size[m]), float(self.task_intensity[m]),
                        float(self.task_deadline[m]))

    def copy(self) -> WorldState:
        return WorldState(
            uav_xy=self.uav_xy.copy(),
            sd_xy=self.sd_xy,
            sd_region=self.sd_region,
            task_size=self.task_size.copy(),
            task_intensity=self.task_intensity.copy(),
            task_deadline=self.task_deadline.copy(),
            offloads=self.offloads.copy(),
            t=self.t,
            uav_speed=None if self.uav_speed is None else self.uav_speed.copy(),
        )


def advance_uav(pos, theta: float, d: float, region, d_max: float) -> np.ndarray:
    """Fly ``d`` metres along heading ``theta`` and clip into ``region``.

    ``region`` is ``(x_lo, y_lo, x_hi, y_hi)``.
    """
    if not 0.0 <= d <= d_max:
        raise ValueError(f"flight distance {d} outside [0, {d_max}]")
    x0, y0, x1, y1 = region
    x = pos[0] + d * math.cos(theta)
    y = pos[1] + d * math.sin(theta)
    return np.array([min(max(x, x0), x1), min(max(y, y0), y1)])


def propulsion_power(v, rotor: RotorParams = RotorParams()):
    """Rotary-wing propulsion power in watts at horizontal speed ``v`` (m/s).

    Accepts scalars or arrays.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("speed must be non-negative")
    v2 = v * v
    v0sq = rotor.induced_velocity_mps ** 2
    blade = rotor.blade_profile_power_w * (1.0 + 3.0 * v2 / rotor.tip_speed_mps ** 2)
    induced = rotor.induced_power_w * np.sqrt(
        np.sqrt(1.0 + v2 * v2 / (4.0 * v0sq * v0sq)) - v2 / (2.0 * v0sq))
    parasite = (0.5 * rotor.fuselage_drag_ratio * rotor.air_density_kgpm3
                * rotor.rotor_solidity * rotor.rotor_disc_area_m2 * v2 * v)
    out = blade + induced + parasite
    return float(out) if out.ndim == 0 else out


def _check_range(name, rng_):
    lo, hi = rng_
    if lo > hi:
        raise ValueError(f"inverted range for {name}: ({lo}, {hi})")


def generate_task_arrays(rng: np.random.Generator, m: int, size_range, intensity_range,
                         deadline_range) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``m`` tasks as (size, intensity, deadline) arrays, each field i.i.d. uniform."""
    _check_range("task size", size_range)
    _check_range("computation intensity", intensity_range)
    _check_range("deadline", deadline_range)
    size = rng.uniform(size_range[0], size_range[1], m)
    intensity = rng.uniform(intensity_range[0], intensity_range[1], m)
    deadline = rng.uniform(deadline_range[0], deadline_range[1], m)
    return size, intensity, deadline


def generate_tasks(rng: np.random.Generator, m: int, ranges) -> list[TaskSpec]:
    size, intensity, deadline = generate_task_arrays(rng, m, *ranges)
    return [TaskSpec(float(a), float(b), float(c)) for a, b, c in zip(size, intensity, deadline)]


def associate(uav_pos, sd_ids, sd_xy, coverage_radius: float, max_served: int) -> list[int]:
    """Up to ``max_served`` SDs from ``sd_ids`` within coverage, nearest first.

    Ties on distance go to the lower SD index.
    """
    sd_ids = np.asarray(sd_ids, dtype=int)
    if sd_ids.size == 0:
        return []
    diff = np.asarray(sd_xy)[sd_ids] - np.asarray(uav_pos)
    dist = np.hypot(diff[:, 0], diff[:, 1])
    inside = dist <= coverage_radius
    ids, dist = sd_ids[inside], dist[inside]
    order = np.lexsort((ids, dist))
    return [int(i) for i in ids[order[:max_served]]]
