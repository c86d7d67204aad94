"""Audio-visual target speaker extraction: separate first, then dereverberate."""

from sepderev.audio import AudioClip, Spectrogram, StftParams, istft, stft
from sepderev.metrics import MetricResult, evaluate, sisdr, stoi

__version__ = "0.1.0"

__all__ = ["AudioClip", "Spectrogram", "StftParams", "stft", "istft", "MetricResult", "evaluate", "sisdr", "stoi"]
