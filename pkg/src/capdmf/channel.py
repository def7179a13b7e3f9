"""Simulated bandwidth-limited loopback: FIR low-pass followed by AWGN."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .dsp import DSPError, RealSignal, fir_apply, lowpass_design

OMEGA_SWEEP = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.9)


@dataclass(frozen=True)
class ChannelConfig:
    omega_n: float
    snr_db: float = math.inf
    taps: int = 101
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.omega_n <= 1.0:
            raise DSPError(f"omega_n must lie in (0, 1], got {self.omega_n}")
        if self.taps < 1 or self.taps % 2 == 0:
            raise DSPError(f"taps must be odd, got {self.taps}")


@dataclass(frozen=True)
class PowerMap:
    """Linear stand-in for the received-optical-power axis.

    ``snr_db = snr_ref_db + slope_db_per_db * (p_dbm - p_ref_dbm)``
    """

    p_ref_dbm: float = -10.0
    snr_ref_db: float = 20.0
    slope_db_per_db: float = 2.0

    def __post_init__(self):
        if not self.slope_db_per_db > 0:
            raise DSPError("PowerMap slope must be positive")


def power_dbm_to_snr_db(p_dbm: float, pmap: PowerMap) -> float:
    return pmap.snr_ref_db + pmap.slope_db_per_db * (p_dbm - pmap.p_ref_dbm)


def snr_db_to_power_dbm(snr_db: float, pmap: PowerMap) -> float:
    return pmap.p_ref_dbm + (snr_db - pmap.snr_ref_db) / pmap.slope_db_per_db


def apply_bandwidth_limit(x: np.ndarray, cfg: ChannelConfig) -> np.ndarray:
    return fir_apply(x, lowpass_design(cfg.taps, cfg.omega_n))


def add_awgn(x: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Add white Gaussian noise at ``snr_db`` relative to the measured signal power.

    ``snr_db = +inf`` disables the noise. The generator is built from ``seed``
    on every call.
    """
    x = np.asarray(x, dtype=float)
    power = float(np.mean(x * x))
    if power == 0.0:
        raise DSPError("add_awgn needs a signal with nonzero power")
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    return x + rng.normal(0.0, sigma, x.size)


class Channel(Protocol):
    def transmit(self, signal: RealSignal, cfg: ChannelConfig) -> RealSignal: ...


class SimulatedChannel:
    """Digital loopback: low-pass impairment, then receiver-side noise."""

    def transmit(self, signal: RealSignal, cfg: ChannelConfig) -> RealSignal:
        y = apply_bandwidth_limit(signal.samples, cfg)
        y = add_awgn(y, cfg.snr_db, cfg.seed)
        return RealSignal(y, signal.sample_rate_hz)
