"""Air-to-ground uplink with probabilistic line-of-sight attenuation.

The LoS-probability curve takes the elevation angle in degrees; every other
angle in the package is in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    bandwidth_hz: float = 1e6
    transmit_power_w: float = 0.1
    noise_power_dbm: float = -110.0
    carrier_hz: float = 2e9
    speed_of_light_mps: float = 299_792_458.0
    path_loss_exponent: float = 2.0
    los_attenuation_db: float = 1.0
    nlos_attenuation_db: float = 20.0
    los_c1: float = 9.61
    los_c2: float = 0.16

    def __post_init__(self):
        for name in ("bandwidth_hz", "transmit_power_w", "carrier_hz", "speed_of_light_mps",
                     "los_c1", "los_c2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.path_loss_exponent < 2:
            raise ValueError("path_loss_exponent must be >= 2")
        if not 0 <= self.los_attenuation_db <= self.nlos_attenuation_db:
            raise ValueError("need 0 dB <= los_attenuation_db <= nlos_attenuation_db")

    @property
    def noise_power_w(self) -> float:
        return float(dbm_to_watt(self.noise_power_dbm))

    @property
    def mu_los(self) -> float:
        return float(db_to_linear(self.los_attenuation_db))

    @property
    def mu_nlos(self) -> float:
        return float(db_to_linear(self.nlos_attenuation_db))

    @property
    def free_space_constant(self) -> float:
        """(4 pi f_c / c)^2."""
        return (4.0 * math.pi * self.carrier_hz / self.speed_of_light_mps) ** 2


def los_probability(elevation_deg, c1: float = 9.61, c2: float = 0.16):
    elevation_deg = np.asarray(elevation_deg, dtype=float)
    p = 1.0 / (1.0 + c1 * np.exp(-c2 * (elevation_deg - c1)))
    return float(p) if p.ndim == 0 else p


def elevation_deg(horizontal_dist, altitude):
    d = np.hypot(horizontal_dist, altitude)
    return np.degrees(np.arcsin(altitude / d))


def channel_gain(horizontal_dist, altitude: float, params: ChannelParams = ChannelParams()):
    """Expected channel power gain at the given horizontal SD-UAV distance(s)."""
    h = np.asarray(horizontal_dist, dtype=float)
    d = np.hypot(h, altitude)
    p_los = los_probability(np.degrees(np.arcsin(altitude / d)), params.los_c1, params.los_c2)
    p_nlos = 1.0 - p_los
    attenuation = p_los * params.mu_los + p_nlos * params.mu_nlos
    g = 1.0 / (params.free_space_constant * d ** params.path_loss_exponent * attenuation)
    return float(g) if np.ndim(g) == 0 else g


def spectral_efficiency(gain, params: ChannelParams = ChannelParams()):
    """log2(1 + SNR) in bit/s/Hz."""
    gain = np.asarray(gain, dtype=float)
    if np.any(gain < 0):
        raise ValueError("gain must be non-negative")
    out = np.log2(1.0 + params.transmit_power_w * gain / params.noise_power_w)
    return float(out) if out.ndim == 0 else out


def transmission_rate(gain, params: ChannelParams = ChannelParams()):
    return params.bandwidth_hz * spectral_efficiency(gain, params)
