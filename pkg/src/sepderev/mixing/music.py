"""Harmonic stand-in for music interference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sepderev.audio import AudioClip


@dataclass(frozen=True)
class MusicConfig:
    n_partials_range: tuple[int, int] = (3, 8)
    fundamental_hz_range: tuple[float, float] = (110.0, 440.0)
    amplitude_decay: float = 0.7

    def check(self, sample_rate: int) -> None:
        hi_partials = self.n_partials_range[1]
        if hi_partials > 0 and self.fundamental_hz_range[1] * hi_partials >= sample_rate / 2:
            raise ValueError(
                f"top partial {self.fundamental_hz_range[1] * hi_partials:.0f} Hz exceeds Nyquist "
                f"at {sample_rate} Hz")


def synth_music(config: MusicConfig, duration: float, rng: np.random.Generator,
                sample_rate: int) -> AudioClip:
    """Sum of harmonic partials with geometric amplitude decay.

    Each partial carries a slow (0.2-2 Hz) random amplitude modulation. The
    result is peak-normalised to 0.9; zero partials give silence.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    config.check(sample_rate)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    n_partials = int(rng.integers(config.n_partials_range[0], config.n_partials_range[1] + 1))
    f0 = float(rng.uniform(*config.fundamental_hz_range))
    y = np.zeros(n)
    for p in range(1, n_partials + 1):
        am_rate = rng.uniform(0.2, 2.0)
        am = 1.0 + 0.3 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
        y += config.amplitude_decay ** (p - 1) * am * np.sin(2 * np.pi * p * f0 * t + rng.uniform(0, 2 * np.pi))
    peak = np.max(np.abs(y)) if n else 0.0
    if peak > 0:
        y *= 0.9 / peak
    return AudioClip(y, sample_rate)
