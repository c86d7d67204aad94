"""Objective metrics: SI-SDR and STOI.

These are the single source of truth for every number the evaluation and
ablation commands report.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from sepderev.audio import AudioClip

SISDR_CAP_DB = 60.0

# STOI analysis constants (10 kHz internal rate).
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0


@dataclass(frozen=True)
class MetricResult:
    sisdr: float
    stoi: float

    def __post_init__(self):
        if not 0.0 <= self.stoi <= 1.0:
            raise ValueError(f"stoi outside [0, 1]: {self.stoi}")


def _pair(estimate: AudioClip, reference: AudioClip) -> tuple[np.ndarray, np.ndarray]:
    if len(estimate) != len(reference):
        raise ValueError(f"length mismatch: estimate {len(estimate)} vs reference {len(reference)}")
    if estimate.sample_rate != reference.sample_rate:
        raise ValueError("sample-rate mismatch between estimate and reference")
    return estimate.samples, reference.samples


def sisdr(estimate: AudioClip, reference: AudioClip) -> float:
    """Scale-invariant SDR in dB, clipped to +/-60 dB.

    Both signals are mean-removed before projecting the estimate onto the
    reference.
    """
    est, ref = _pair(estimate, reference)
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise ValueError("sisdr reference is silent")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    residual = est - target
    t_e = float(np.dot(target, target))
    r_e = float(np.dot(residual, residual))
    if r_e <= 0.0:
        return SISDR_CAP_DB
    if t_e <= 0.0:
        return -SISDR_CAP_DB
    return float(np.clip(10.0 * np.log10(t_e / r_e), -SISDR_CAP_DB, SISDR_CAP_DB))


def resample(x: np.ndarray, fs_in: int, fs_out: int) -> np.ndarray:
    """Polyphase windowed-sinc resampling (Kaiser window, ~-60 dB stopband)."""
    if fs_in == fs_out:
        return np.asarray(x, dtype=np.float64)
    ratio = Fraction(fs_out, fs_in)
    return resample_poly(x, ratio.numerator, ratio.denominator, window=("kaiser", 6.0))


def _third_octave_matrix(fs: int, nfft: int, num_bands: int, min_freq: float) -> np.ndarray:
    freqs = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands, dtype=np.float64)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, len(freqs)))
    for i in range(num_bands):
        lo_bin = int(np.argmin((freqs - lo[i]) ** 2))
        hi_bin = int(np.argmin((freqs - hi[i]) ** 2))
        obm[i, lo_bin:hi_bin] = 1.0
    return obm


_OBM = _third_octave_matrix(STOI_FS, STOI_NFFT, STOI_BANDS, STOI_MIN_FREQ)


def _stoi_window() -> np.ndarray:
    # Symmetric Hann without its zero endpoints.
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frames(x: np.ndarray, hop: int) -> np.ndarray:
    n = 1 + (len(x) - STOI_FRAME) // hop
    idx = np.arange(STOI_FRAME)[None, :] + hop * np.arange(n)[:, None]
    return x[idx] * _stoi_window()[None, :]


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    out = np.zeros((len(frames) - 1) * hop + STOI_FRAME)
    for i, fr in enumerate(frames):
        out[i * hop:i * hop + STOI_FRAME] += fr
    return out


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hop = STOI_FRAME // 2
    xf, yf = _frames(x, hop), _frames(y, hop)
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + np.finfo(float).eps)
    keep = (np.max(energy) - STOI_DYN_RANGE_DB - energy) < 0
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x, STOI_FRAME // 2), n=STOI_NFFT, axis=1).T
    return np.sqrt(_OBM @ np.abs(spec) ** 2)


def stoi(estimate: AudioClip, reference: AudioClip) -> float:
    """Short-time objective intelligibility of ``estimate`` w.r.t. a clean ``reference``.

    Canonical 10 kHz parameterization: 256-sample Hann frames at 50% overlap
    with 512-point FFTs, 15 one-third-octave bands from 150 Hz, 30-frame
    (384 ms) segments, -15 dB clipping bound, and removal of frames more than
    40 dB below the loudest reference frame.

    Raises:
        ValueError: if the clips are shorter than one 384 ms segment, or if
            too few non-silent frames remain to form one segment.
    """
    est, ref = _pair(estimate, reference)
    fs = reference.sample_rate
    min_len = int(np.ceil((STOI_SEGMENT * STOI_FRAME // 2 + STOI_FRAME // 2) * fs / STOI_FS))
    if len(ref) < min_len:
        raise ValueError(f"clip shorter than one STOI segment ({len(ref)} < {min_len} samples)")
    x = resample(ref, fs, STOI_FS)
    y = resample(est, fs, STOI_FS)
    x, y = _remove_silent_frames(x, y)
    x_env, y_env = _band_envelopes(x), _band_envelopes(y)
    n_frames = x_env.shape[1]
    if n_frames < STOI_SEGMENT:
        raise ValueError(
            f"only {n_frames} non-silent frames remain; need {STOI_SEGMENT} for one segment")

    clip_factor = 10.0 ** (-STOI_BETA_DB / 20.0)
    eps = np.finfo(float).eps
    scores = []
    for m in range(STOI_SEGMENT, n_frames + 1):
        xs = x_env[:, m - STOI_SEGMENT:m]
        ys = y_env[:, m - STOI_SEGMENT:m]
        norm = np.linalg.norm(xs, axis=1, keepdims=True) / (np.linalg.norm(ys, axis=1, keepdims=True) + eps)
        ys = np.minimum(ys * norm, xs * (1.0 + clip_factor))
        xs = xs - xs.mean(axis=1, keepdims=True)
        ys = ys - ys.mean(axis=1, keepdims=True)
        xs /= np.linalg.norm(xs, axis=1, keepdims=True) + eps
        ys /= np.linalg.norm(ys, axis=1, keepdims=True) + eps
        scores.append(np.sum(xs * ys) / STOI_BANDS)
    # Mean correlation can dip below zero for adversarial inputs; the metric is reported in [0, 1].
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def evaluate(estimate: AudioClip, reference: AudioClip) -> MetricResult:
    return MetricResult(sisdr=sisdr(estimate, reference), stoi=stoi(estimate, reference))
