"""Network input encoding of raw agent observations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..env import EnvConfig, observation_scale

SD_FIELDS = 5
PEER_FIELDS = 3


@dataclass(frozen=True)
class ObservationEncoder:
    """Scale raw observations and replace every bearing by a gated (cos, sin) pair.

    A raw bearing jumps from 2*pi to 0 at due east; the pair is continuous.
    Padded entries (validity flag 0) encode as (0, 0).
    """

    scale: np.ndarray
    angle_idx: np.ndarray
    valid_idx: np.ndarray
    keep_idx: np.ndarray

    @classmethod
    def for_config(cls, config: EnvConfig) -> ObservationEncoder:
        k, q = config.observed_sds, config.world.num_peer_uavs
        sd0 = 3 + SD_FIELDS * np.arange(k)
        peer0 = 3 + SD_FIELDS * k + PEER_FIELDS * np.arange(q)
        angle = np.concatenate([sd0, peer0])
        valid = np.concatenate([sd0 + SD_FIELDS - 1, peer0 + PEER_FIELDS - 1])
        keep = np.setdiff1d(np.arange(config.obs_dim), angle)
        return cls(observation_scale(config), angle, valid, keep)

    @property
    def dim(self) -> int:
        return self.keep_idx.size + 2 * self.angle_idx.size

    def __call__(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        ang = raw[..., self.angle_idx]
        gate = raw[..., self.valid_idx]
        scaled = raw[..., self.keep_idx] / self.scale[self.keep_idx]
        return np.concatenate([scaled, gate * np.cos(ang), gate * np.sin(ang)], axis=-1)
