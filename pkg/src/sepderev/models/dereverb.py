"""Skip-connected convolutional encoder/decoder that dereverberates log-magnitude spectrograms."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from sepderev import tf
from sepderev.audio import AudioClip, StftParams
from sepderev.models.separator import check_finite

# Floor on the RMS-normalised magnitude; small floors let near-silent bins dominate the MSE.
LOGMAG_EPS = 1.0


@dataclass
class DereverbConfig:
    depth: int = 3
    base_channels: int = 8
    stft: StftParams = field(default_factory=StftParams)
    logmag_eps: float = LOGMAG_EPS

    def __post_init__(self):
        if isinstance(self.stft, dict):
            self.stft = StftParams(**self.stft)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")

    def to_dict(self) -> dict:
        return {"depth": self.depth, "base_channels": self.base_channels,
                "stft": self.stft.to_dict(), "logmag_eps": self.logmag_eps}


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1), nn.GroupNorm(1, c_out), nn.PReLU(),
        nn.Conv2d(c_out, c_out, 3, padding=1), nn.PReLU(),
    )


def magnitude(spec: torch.Tensor) -> torch.Tensor:
    # Smooth at the origin so gradients stay finite for all-zero bins.
    return torch.sqrt(spec.real ** 2 + spec.imag ** 2 + 1e-12)


def log_magnitude(x: torch.Tensor, stft: StftParams, eps: float = LOGMAG_EPS, scale: torch.Tensor | None = None):
    """``log(|STFT(x / scale)| + eps)``; ``scale`` defaults to the RMS of ``x``."""
    if scale is None:
        scale = x.pow(2).mean(dim=-1, keepdim=True).sqrt() + 1e-8
    return torch.log(magnitude(tf.stft(x / scale, stft)) + eps)


class Dereverberator(nn.Module):
    """U-shaped conv network predicting a residual on the input log-magnitude.

    Each encoder level halves both spectrogram axes; every skip connection
    passes through its own 1x1 conv before being concatenated in the
    decoder. The output conv is zero-initialised, so an untrained network
    (or one built with ``identity=True``) returns its input unchanged.
    """

    def __init__(self, cfg: DereverbConfig, identity: bool = True):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * 2 ** i for i in range(cfg.depth + 1)]
        self.inp = _conv_block(1, chans[0])
        self.down = nn.ModuleList(nn.Conv2d(chans[i], chans[i + 1], 2, stride=2) for i in range(cfg.depth))
        self.enc = nn.ModuleList(_conv_block(chans[i + 1], chans[i + 1]) for i in range(cfg.depth))
        self.skip = nn.ModuleList(nn.Conv2d(chans[i], chans[i], 1) for i in range(cfg.depth))
        self.up = nn.ModuleList(nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2) for i in range(cfg.depth))
        self.dec = nn.ModuleList(_conv_block(2 * chans[i], chans[i]) for i in range(cfg.depth))
        self.out = nn.Conv2d(chans[0], 1, 1)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.orthogonal_(m.weight)
                nn.init.zeros_(m.bias)
        if identity:
            nn.init.zeros_(self.out.weight)

    def predict_logmag(self, logmag: torch.Tensor) -> torch.Tensor:
        """``[B, F, N]`` input log-magnitude -> predicted dry log-magnitude of the same shape."""
        nf, nt = logmag.shape[-2:]
        m = 2 ** self.cfg.depth
        pad_f, pad_t = (-nf) % m, (-nt) % m
        h = F.pad(logmag.unsqueeze(1), (0, pad_t, 0, pad_f), mode="replicate")
        h = self.inp(h)
        skips = []
        for i in range(self.cfg.depth):
            skips.append(self.skip[i](h))
            h = self.enc[i](self.down[i](h))
        for i in reversed(range(self.cfg.depth)):
            h = self.dec[i](torch.cat([self.up[i](h), skips[i]], dim=1))
        delta = self.out(h)[:, 0, :nf, :nt]
        return logmag + delta

    def forward(self, reverberant: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Dereverberate ``[B, L]`` waveforms.

        Returns:
            (waveforms ``[B, L]``, predicted log-magnitudes ``[B, F, N]`` of the
            RMS-normalised signal), the latter being what the training loss sees.
        """
        check_finite(reverberant, "dereverb input")
        stft_p = self.cfg.stft
        eps = self.cfg.logmag_eps
        scale = reverberant.pow(2).mean(dim=-1, keepdim=True).sqrt() + 1e-8
        spec = tf.stft(reverberant / scale, stft_p)
        mag = magnitude(spec)
        pred = self.predict_logmag(torch.log(mag + eps))
        check_finite(pred, "dereverb output")
        est_mag = (torch.exp(pred) - eps).clamp_min(0.0)
        out = tf.istft(spec / mag * est_mag, stft_p, reverberant.shape[-1]) * scale
        return out, pred

    @torch.no_grad()
    def dereverb(self, clip: AudioClip) -> AudioClip:
        if clip.sample_rate != self.cfg.stft.sample_rate:
            raise ValueError(f"clip at {clip.sample_rate} Hz, model expects {self.cfg.stft.sample_rate} Hz")
        dtype = next(self.parameters()).dtype
        out, _ = self.forward(torch.as_tensor(clip.samples, dtype=dtype).unsqueeze(0))
        return AudioClip(out[0].double().numpy(), clip.sample_rate)

    def target_logmag(self, anechoic: torch.Tensor, reverberant_ref: torch.Tensor) -> torch.Tensor:
        """Training target: dry log-magnitude at the level the RMS-normalised reverberant input implies."""
        scale = reverberant_ref.pow(2).mean(dim=-1, keepdim=True).sqrt() + 1e-8
        return log_magnitude(anechoic, self.cfg.stft, self.cfg.logmag_eps, scale)


def dereverb_forward(reverberant: AudioClip, model: Dereverberator) -> AudioClip:
    return model.dereverb(reverberant)
