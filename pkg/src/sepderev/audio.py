"""Waveform containers, STFT/iSTFT, and gain algebra.

Everything here works on float64 numpy arrays. The differentiable torch
counterparts used by the networks and losses live in :mod:`sepderev.tf`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve


@dataclass(frozen=True)
class AudioClip:
    """Monaural waveform plus its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioClip expects a 1-D waveform, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)

    def __add__(self, other: "AudioClip") -> "AudioClip":
        _check_compatible(self, other)
        return self.with_samples(self.samples + other.samples)

    def __sub__(self, other: "AudioClip") -> "AudioClip":
        _check_compatible(self, other)
        return self.with_samples(self.samples - other.samples)

    def scaled(self, gain: float) -> "AudioClip":
        return self.with_samples(self.samples * gain)

    def segment(self, start: int, length: int) -> "AudioClip":
        if start < 0 or start + length > len(self):
            raise ValueError(f"segment [{start}, {start + length}) outside clip of length {len(self)}")
        return self.with_samples(self.samples[start:start + length].copy())


def _check_compatible(a: AudioClip, b: AudioClip) -> None:
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"sample-rate mismatch: {a.sample_rate} vs {b.sample_rate}")
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")


@dataclass(frozen=True)
class StftParams:
    """Framing parameters shared by every STFT in the package.

    With ``center=True`` the signal is zero-padded by ``fft_size // 2`` on the
    left and up to a whole number of hops on the right, so every input sample
    is covered by the same number of frames and the inverse is exact. The
    frame count for an input of ``n`` samples is ``1 + ceil(n / hop)``, which
    equals ``1 + (padded_len - fft_size) // hop``.
    """

    fft_size: int = 512
    hop: int = 256
    window: str = "hann"
    sample_rate: int = 16000
    center: bool = True

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size % 2:
            raise ValueError(f"fft_size must be a positive even number, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.fft_size % self.hop:
            # Periodic Hann only overlap-adds to a constant at hops dividing the frame.
            raise ValueError("hop must divide fft_size for a constant-overlap-add Hann window")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if self.center:
            return 1 + -(-n_samples // self.hop)
        return 1 + (n_samples - self.fft_size) // self.hop

    def window_array(self) -> np.ndarray:
        n = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.fft_size)

    def to_dict(self) -> dict:
        return {"fft_size": self.fft_size, "hop": self.hop, "window": self.window,
                "sample_rate": self.sample_rate, "center": self.center}


@dataclass(frozen=True)
class Spectrogram:
    """Complex ``[F, N]`` STFT plus the parameters and signal length needed to invert it."""

    bins: np.ndarray
    stft_params: StftParams
    length: int = field(default=-1)

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if bins.ndim != 2 or bins.shape[0] != self.stft_params.n_bins:
            raise ValueError(
                f"spectrogram must have shape [{self.stft_params.n_bins}, N], got {bins.shape}")
        object.__setattr__(self, "bins", bins.astype(np.complex128, copy=False))

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


def _pad_amounts(n_samples: int, params: StftParams) -> tuple[int, int]:
    n_frames = params.n_frames(n_samples)
    total = (n_frames - 1) * params.hop + params.fft_size
    left = params.fft_size // 2
    return left, total - n_samples - left


def stft(clip: AudioClip, params: StftParams) -> Spectrogram:
    """Hann-windowed STFT of a clip.

    Raises:
        ValueError: if the clip is shorter than one analysis window.
    """
    x = clip.samples
    if len(x) < params.fft_size:
        raise ValueError(f"signal too short: {len(x)} samples < fft_size {params.fft_size}")
    if params.center:
        left, right = _pad_amounts(len(x), params)
        x = np.pad(x, (left, right))
    n_frames = 1 + (len(x) - params.fft_size) // params.hop
    idx = np.arange(params.fft_size)[None, :] + params.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * params.window_array()[None, :]
    return Spectrogram(np.fft.rfft(frames, axis=1).T, params, len(clip))


def istft(spec: Spectrogram) -> AudioClip:
    """Weighted overlap-add inverse of :func:`stft`.

    The synthesis applies the analysis window again and divides by the summed
    squared window, which is exact wherever that envelope is non-zero.
    """
    params = spec.stft_params
    bins = spec.bins
    if bins.ndim != 2 or bins.shape[0] != params.n_bins:
        raise ValueError(f"malformed spectrogram of shape {bins.shape}")
    n_frames = bins.shape[1]
    win = params.window_array()
    frames = np.fft.irfft(bins.T, n=params.fft_size, axis=1) * win[None, :]
    total = (n_frames - 1) * params.hop + params.fft_size
    out = np.zeros(total)
    env = np.zeros(total)
    for i in range(n_frames):
        sl = slice(i * params.hop, i * params.hop + params.fft_size)
        out[sl] += frames[i]
        env[sl] += win ** 2
    nz = env > 1e-10
    out[nz] /= env[nz]
    if params.center:
        length = spec.length if spec.length >= 0 else total - params.fft_size
        left = params.fft_size // 2
        out = out[left:left + length]
    elif spec.length >= 0:
        out = out[:spec.length]
    return AudioClip(out, params.sample_rate)


def rms(clip: AudioClip) -> float:
    if len(clip) == 0:
        raise ValueError("rms of an empty clip is undefined")
    return float(np.sqrt(np.mean(clip.samples ** 2)))


def snr_db(target: AudioClip, interference: AudioClip) -> float:
    """Level ratio ``20 log10(rms(target) / rms(interference))``."""
    return 20.0 * np.log10(rms(target) / rms(interference))


def gain_for_snr(target_ref: AudioClip, interferer: AudioClip, snr: float) -> float:
    """Gain to apply to ``interferer`` so the pair sits at ``snr`` dB.

    Raises:
        ValueError: if either clip is silent.
    """
    rt, ri = rms(target_ref), rms(interferer)
    if ri <= 0.0:
        raise ValueError("cannot scale silent interferer")
    if rt <= 0.0:
        raise ValueError("cannot mix against a silent target")
    return float(10.0 ** (-snr / 20.0) * rt / ri)


def convolve_rir(clip: AudioClip, rir: AudioClip) -> AudioClip:
    """Reverberate ``clip`` with ``rir``.

    The impulse response is shifted so its strongest tap lands at lag 0, which
    keeps the output time-aligned with the dry input. The full linear
    convolution is truncated to ``len(clip)`` samples.
    """
    if clip.sample_rate != rir.sample_rate:
        raise ValueError(f"sample-rate mismatch: clip {clip.sample_rate} Hz, rir {rir.sample_rate} Hz")
    h = rir.samples[int(np.argmax(np.abs(rir.samples))):]
    n = len(clip)
    if len(h) == 1:
        return clip.with_samples(clip.samples * h[0])
    y = fftconvolve(clip.samples, h)[:n]
    return clip.with_samples(y)
