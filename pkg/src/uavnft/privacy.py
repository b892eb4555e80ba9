"""Gaussian-mechanism export of numeric flight-data series.

Noise comes from a documented generator so other implementations can reproduce
a stream bit for bit: for counter ``k = 0, 1, ...`` take
``B = SHA-256(b"uavnft/gauss/v1" || u64(seed) || u64(k))``, read
``u1 = ((B[0:8] >> 11) + 0.5) / 2**53`` and ``u2 = (B[8:16] >> 11) / 2**53``
(big-endian), and emit the Box-Muller pair ``sqrt(-2 ln u1) * cos(2 pi u2)``
then ``sqrt(-2 ln u1) * sin(2 pi u2)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterator

_STREAM_PREFIX = b"uavnft/gauss/v1"
_TWO53 = float(2**53)


@dataclass(frozen=True)
class NumericSeries:
    values: tuple[float, ...]
    clamp_lo: float
    clamp_hi: float
    unit: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.clamp_lo) and math.isfinite(self.clamp_hi)):
            raise ValueError("clamp bounds must be finite")
        if not self.clamp_lo < self.clamp_hi:
            raise ValueError("clamp_lo must be below clamp_hi")
        if any(math.isnan(v) for v in self.values):
            raise ValueError("series contains NaN")

    def clamped(self) -> tuple[float, ...]:
        lo, hi = self.clamp_lo, self.clamp_hi
        return tuple(min(max(float(v), lo), hi) for v in self.values)


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    sensitivity: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not (self.sensitivity > 0 and math.isfinite(self.sensitivity)):
            raise ValueError("sensitivity must be positive")

    @classmethod
    def for_series(cls, series: NumericSeries, epsilon: float, delta: float) -> "PrivacyBudget":
        # one record moves the released value by at most the clamp width
        return cls(epsilon, delta, series.clamp_hi - series.clamp_lo)


def calibrate_sigma(budget: PrivacyBudget) -> float:
    """sigma = sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon"""
    if budget.epsilon <= 0 or budget.sensitivity <= 0:
        raise ValueError("epsilon and sensitivity must be positive")
    return budget.sensitivity * math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon


def standard_normals(seed: int) -> Iterator[float]:
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    prefix = _STREAM_PREFIX + seed.to_bytes(8, "big")
    k = 0
    while True:
        block = hashlib.sha256(prefix + k.to_bytes(8, "big")).digest()
        u1 = ((int.from_bytes(block[0:8], "big") >> 11) + 0.5) / _TWO53
        u2 = (int.from_bytes(block[8:16], "big") >> 11) / _TWO53
        radius = math.sqrt(-2.0 * math.log(u1))
        yield radius * math.cos(2.0 * math.pi * u2)
        yield radius * math.sin(2.0 * math.pi * u2)
        k += 1


def add_noise(series: NumericSeries, sigma: float, rng_seed: int) -> NumericSeries:
    """Clamp every value, then add independent N(0, sigma^2) noise."""
    if not sigma >= 0:
        raise ValueError("sigma must be non-negative")
    clean = series.clamped()
    if sigma == 0:
        noisy = clean
    else:
        stream = standard_normals(rng_seed)
        noisy = tuple(v + sigma * next(stream) for v in clean)
    return NumericSeries(noisy, series.clamp_lo, series.clamp_hi, series.unit)


def gaussian_mechanism(series: NumericSeries, epsilon: float, delta: float,
                       rng_seed: int) -> tuple[NumericSeries, float]:
    """Calibrate sigma from the series' clamp width and release a noised copy."""
    sigma = calibrate_sigma(PrivacyBudget.for_series(series, epsilon, delta))
    return add_noise(series, sigma, rng_seed), sigma
