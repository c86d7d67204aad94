"""Synthetic room impulse responses: direct path plus an exponentially decaying noise tail."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sepderev.audio import AudioClip

# 60 dB amplitude decay: exp(-a * T60) = 10**(-3)  =>  a = 3 ln 10 / T60.
_DECAY_60DB = 3.0 * math.log(10.0)


@dataclass(frozen=True)
class RirConfig:
    t60_range: tuple[float, float] = (0.2, 0.6)
    rir_length: float = 0.6
    direct_to_reverberant_db_range: tuple[float, float] = (0.0, 6.0)

    def __post_init__(self):
        lo, hi = self.t60_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"t60_range must satisfy 0 < lo <= hi, got {self.t60_range}")
        if self.rir_length < hi:
            raise ValueError(f"rir_length {self.rir_length} s is shorter than the largest T60 {hi} s")
        dlo, dhi = self.direct_to_reverberant_db_range
        if dlo > dhi:
            raise ValueError("direct_to_reverberant_db_range must be ordered")

    def draw_t60(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(*self.t60_range))

    def draw_drr(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(*self.direct_to_reverberant_db_range))


def synth_rir(config: RirConfig, rng: np.random.Generator, sample_rate: int,
              t60: float | None = None, drr_db: float | None = None) -> AudioClip:
    """Draw one impulse response.

    The direct path is a unit impulse at lag 0. The tail (lags >= 1) is white
    Gaussian noise under an ``exp(-6.91 t / T60)`` envelope, scaled so the
    direct-path energy over the tail energy equals the drawn direct-to-
    reverberant ratio. An infinite ratio yields a pure impulse.

    ``t60``/``drr_db`` override the draws, which lets several sources share one room.
    """
    if t60 is None:
        t60 = config.draw_t60(rng)
    if drr_db is None:
        drr_db = config.draw_drr(rng)
    n = max(int(round(config.rir_length * sample_rate)), 1)
    h = np.zeros(n)
    h[0] = 1.0
    noise = rng.standard_normal(n - 1)
    if n == 1 or math.isinf(drr_db) and drr_db > 0:
        return AudioClip(h, sample_rate)
    t = np.arange(1, n) / sample_rate
    tail = noise * np.exp(-_DECAY_60DB * t / t60)
    tail *= math.sqrt(10.0 ** (-drr_db / 10.0) / np.sum(tail ** 2))
    h[1:] = tail
    return AudioClip(h, sample_rate)
