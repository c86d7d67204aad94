"""Synthetic speech-like utterances so the whole pipeline runs without a corpus.

An utterance is a string of syllables separated by pauses. Voiced syllables
are glottal pulse trains with a drifting pitch contour, shaped by three
formant resonators drawn from a small vowel table; some syllables start with
a short high-passed noise burst standing in for a fricative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, lfilter

from sepderev.audio import AudioClip

# (F1, F2, F3) in Hz for a handful of vowels.
VOWELS = np.array([
    (730, 1090, 2440),
    (570, 840, 2410),
    (300, 870, 2240),
    (270, 2290, 3010),
    (530, 1840, 2480),
    (660, 1720, 2410),
    (440, 1020, 2240),
    (490, 1350, 1690),
])

UTTERANCE_RMS = 0.1


@dataclass(frozen=True)
class SpeakerProfile:
    f0_hz: float
    formant_scale: float
    pitch_range: float

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "SpeakerProfile":
        return cls(
            f0_hz=float(rng.uniform(85.0, 250.0)),
            formant_scale=float(rng.uniform(0.85, 1.2)),
            pitch_range=float(rng.uniform(0.05, 0.2)),
        )


def _resonator(x: np.ndarray, freq: float, bandwidth: float, sr: int) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def _voiced(n: int, speaker: SpeakerProfile, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    drift = 1.0 + speaker.pitch_range * np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = speaker.f0_hz * rng.uniform(0.9, 1.1) * drift
    phase = np.cumsum(f0 / sr)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    # Glottal-ish low-pass on the pulse train.
    src = lfilter([1.0], [1.0, -0.9], pulses)
    formants = VOWELS[rng.integers(len(VOWELS))] * speaker.formant_scale
    y = np.zeros(n)
    for f, bw in zip(formants, (80.0, 120.0, 160.0)):
        if f < 0.45 * sr:
            y += _resonator(src, f, bw, sr)
    return y


def _fricative(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    cutoff = min(0.6 * sr / 2, 2500.0) / (sr / 2)
    b, a = butter(2, cutoff, btype="high")
    return lfilter(b, a, rng.standard_normal(n))


def _envelope(n: int) -> np.ndarray:
    ramp = max(1, min(n // 4, 1 + n // 8))
    env = np.ones(n)
    w = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[:ramp] = w
    env[n - ramp:] = w[::-1]
    return env


def synth_utterance(speaker: SpeakerProfile, duration: float, sample_rate: int,
                    rng: np.random.Generator) -> AudioClip:
    """One utterance of ``duration`` seconds, normalised so its active part has RMS 0.1."""
    n_total = int(round(duration * sample_rate))
    y = np.zeros(n_total)
    pos = int(rng.uniform(0.0, 0.1) * sample_rate)
    while pos < n_total:
        if rng.random() < 0.3:
            nf = int(rng.uniform(0.03, 0.08) * sample_rate)
            seg = 0.3 * _fricative(nf, sample_rate, rng) * _envelope(nf)
            end = min(pos + nf, n_total)
            y[pos:end] += seg[: end - pos]
            pos = end
        nv = int(rng.uniform(0.08, 0.3) * sample_rate)
        seg = _voiced(nv, speaker, sample_rate, rng)
        seg = seg / (np.sqrt(np.mean(seg ** 2)) + 1e-12) * rng.uniform(0.5, 1.0) * _envelope(nv)
        end = min(pos + nv, n_total)
        y[pos:end] += seg[: end - pos]
        pos = end + int(rng.uniform(0.03, 0.25) * sample_rate)
    active = np.abs(y) > 1e-4 * (np.max(np.abs(y)) + 1e-12)
    level = np.sqrt(np.mean(y[active] ** 2)) if active.any() else 0.0
    if level > 0:
        y *= UTTERANCE_RMS / level
    return AudioClip(y, sample_rate)
