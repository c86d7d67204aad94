"""Mono WAV reading/writing on top of :mod:`scipy.io.wavfile`."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from sepderev.audio import AudioClip

_WRITE_DTYPES = {"pcm16": np.int16, "float32": np.float32, "float64": np.float64}


def read_wav(path, channel: int | None = None) -> AudioClip:
    """Read a WAV file into an :class:`AudioClip`.

    PCM 16-bit is scaled to [-1, 1); float files are returned as stored.
    Multichannel files are rejected unless ``channel`` picks one.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing WAV file: {path}")
    sr, data = wavfile.read(path)
    if data.ndim == 2:
        if channel is None:
            raise ValueError(f"{path} has {data.shape[1]} channels; pass channel=0 to take the first")
        data = data[:, channel]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype} in {path}")
    return AudioClip(samples, sr)


def write_wav(path, clip: AudioClip, dtype: str = "float32") -> None:
    if dtype not in _WRITE_DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_WRITE_DTYPES)}")
    x = clip.samples
    if dtype == "pcm16":
        x = np.clip(np.round(x * 32768.0), -32768, 32767)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, clip.sample_rate, x.astype(_WRITE_DTYPES[dtype]))
