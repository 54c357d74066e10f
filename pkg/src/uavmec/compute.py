"""Offloading delay, edge computation energy, fairness and objective bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .world import TaskSpec


class UnservableTask(ValueError):
    """Raised when a task has no uplink rate or no CPU share; it cannot be offloaded."""


@dataclass(frozen=True)
class SlotMetrics:
    fairness: float = 0.0
    delay_s: float = 0.0
    energy_j: float = 0.0
    offloaded: int = 0


@dataclass(frozen=True)
class EpisodeMetrics:
    fairness: float = 0.0
    delay_s: float = 0.0
    energy_j: float = 0.0
    offloaded: int = 0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def offload_delay(task: TaskSpec, rate: float, f_alloc: float) -> float:
    """Uplink time plus edge computing time, in seconds."""
    if rate <= 0 or f_alloc <= 0:
        raise UnservableTask(f"rate={rate}, f_alloc={f_alloc}")
    return task.size_bits / rate + task.size_bits * task.cycles_per_bit / f_alloc


def computation_energy(task: TaskSpec, f_alloc: float, kappa: float) -> float:
    if f_alloc < 0:
        raise ValueError("f_alloc must be non-negative")
    return kappa * f_alloc * f_alloc * task.size_bits * task.cycles_per_bit


def fairness_index(offloads, fairness_scale: float, num_slots: int):
    """Fairness weight 1 - lambda * b / T; works elementwise on arrays."""
    return 1.0 - fairness_scale * offloads / num_slots


def accumulate_objectives(per_slot) -> EpisodeMetrics:
    # fsum keeps totals independent of slot order
    per_slot = list(per_slot)
    return EpisodeMetrics(
        fairness=math.fsum(s.fairness for s in per_slot),
        delay_s=math.fsum(s.delay_s for s in per_slot),
        energy_j=math.fsum(s.energy_j for s in per_slot),
        offloaded=sum(s.offloaded for s in per_slot),
    )
