"""Grid-style audio-visual separation network with per-block estimate heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from sepderev import tf
from sepderev.audio import AudioClip, StftParams


@dataclass
class SeparatorConfig:
    """Hyper-parameters of :class:`Separator`.

    Args:
        num_blocks: number of stacked separation blocks (K).
        channels: latent channels C of the time-frequency embedding.
        visual_channels: channels C_v the visual features are projected to.
        block_hidden: hidden units of each recurrent sweep (per direction).
        visual_dim: width of one visual frame (lip + expression features).
        fps: video frame rate of the visual stream.
        stft: framing of the complex spectrogram the network operates on.
    """

    num_blocks: int = 6
    channels: int = 32
    visual_channels: int = 16
    block_hidden: int = 32
    visual_dim: int = 24
    fps: int = 25
    stft: StftParams = field(default_factory=StftParams)

    def __post_init__(self):
        if isinstance(self.stft, dict):
            self.stft = StftParams(**self.stft)
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.channels < 1 or self.visual_channels < 1:
            raise ValueError("channels and visual_channels must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stft"] = self.stft.to_dict()
        return d


@dataclass
class SeparationOutput:
    """Final estimate plus the K per-block estimates E_1..E_K (E_K is the final one)."""

    final_estimate: object
    intermediates: list
    latent_shape: tuple = ()

    def __post_init__(self):
        if self.intermediates and self.intermediates[-1] is not self.final_estimate:
            raise ValueError("the last intermediate estimate must be the final estimate")


def check_finite(t: torch.Tensor, where: str) -> None:
    if not torch.isfinite(t).all():
        raise FloatingPointError(f"numerical divergence in {where}")


class GridBlock(nn.Module):
    """Shape-preserving ``[B, C, F, N]`` block.

    A bidirectional LSTM first sweeps along time inside every frequency bin,
    then a second one sweeps along frequency inside every frame. Both sweeps
    are pre-normalized residual branches whose output projections start at
    zero, so a fresh block is the identity map.
    """

    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.time_norm = nn.LayerNorm(channels)
        self.time_rnn = nn.LSTM(channels, hidden, batch_first=True, bidirectional=True)
        self.time_proj = nn.Linear(2 * hidden, channels)
        self.freq_norm = nn.LayerNorm(channels)
        self.freq_rnn = nn.LSTM(channels, hidden, batch_first=True, bidirectional=True)
        self.freq_proj = nn.Linear(2 * hidden, channels)
        for proj in (self.time_proj, self.freq_proj):
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, nf, nt = x.shape
        h = x.permute(0, 2, 3, 1).reshape(b * nf, nt, c)
        h = h + self.time_proj(self.time_rnn(self.time_norm(h))[0])
        h = h.reshape(b, nf, nt, c).transpose(1, 2).reshape(b * nt, nf, c)
        h = h + self.freq_proj(self.freq_rnn(self.freq_norm(h))[0])
        return h.reshape(b, nt, nf, c).permute(0, 3, 2, 1)


def visual_frame_index(n_frames: int, stft: StftParams, fps: int, n_visual: int) -> torch.Tensor:
    """Nearest-preceding video frame for every STFT frame centre."""
    centres = np.arange(n_frames) * stft.hop / stft.sample_rate
    idx = np.minimum(np.floor(centres * fps + 1e-9).astype(np.int64), n_visual - 1)
    return torch.from_numpy(idx)


class Separator(nn.Module):
    """Audio-visual separation network.

    The mixture STFT (real/imag as two channels) is embedded by a 3x3 conv,
    concatenated along channels with the projected visual stream, squeezed
    back to C channels, and refined by K grid blocks. Each block feeds its own
    transposed-conv head that predicts a complex spectrogram, giving one
    waveform estimate per block.
    """

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.encoder = nn.Sequential(nn.Conv2d(2, c, 3, padding=1), nn.GroupNorm(1, c), nn.PReLU())
        self.visual_proj = nn.Linear(cfg.visual_dim, cfg.visual_channels)
        self.fuse = nn.Conv2d(c + cfg.visual_channels, c, 1)
        self.blocks = nn.ModuleList(GridBlock(c, cfg.block_hidden) for _ in range(cfg.num_blocks))
        self.heads = nn.ModuleList(nn.ConvTranspose2d(c, 2, 3, padding=1) for _ in range(cfg.num_blocks))
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.orthogonal_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, mixture: torch.Tensor, visual: torch.Tensor) -> list[torch.Tensor]:
        """Run the network.

        Args:
            mixture: ``[B, L]`` waveforms.
            visual: ``[B, N_v, D]`` visual feature frames.

        Returns:
            K waveform estimates, each ``[B, L]``; the last one is the final output.
        """
        if mixture.dim() != 2 or visual.dim() != 3 or visual.shape[0] != mixture.shape[0]:
            raise ValueError(f"bad input shapes: mixture {tuple(mixture.shape)}, visual {tuple(visual.shape)}")
        if visual.shape[-1] != self.cfg.visual_dim:
            raise ValueError(f"visual feature width {visual.shape[-1]} != configured {self.cfg.visual_dim}")
        stft_p = self.cfg.stft
        length = mixture.shape[-1]
        expected_nv = round(length / stft_p.sample_rate * self.cfg.fps)
        if visual.shape[1] != expected_nv:
            raise ValueError(
                f"visual stream has {visual.shape[1]} frames, mixture of {length} samples needs {expected_nv}")
        check_finite(mixture, "mixture input")
        check_finite(visual, "visual input")

        scale = mixture.std(dim=-1, keepdim=True) + 1e-8
        spec = tf.stft(mixture / scale, stft_p)
        z = self.encoder(torch.stack([spec.real, spec.imag], dim=1))
        _, _, nf, nt = z.shape

        idx = visual_frame_index(nt, stft_p, self.cfg.fps, visual.shape[1]).to(visual.device)
        v = self.visual_proj(visual[:, idx, :]).transpose(1, 2)
        v = v.unsqueeze(2).expand(-1, -1, nf, -1)
        z = self.fuse(torch.cat([z, v], dim=1))

        estimates = []
        for k, (block, head) in enumerate(zip(self.blocks, self.heads)):
            z = block(z)
            check_finite(z, f"block {k + 1}")
            ri = head(z)
            est = tf.istft(torch.complex(ri[:, 0], ri[:, 1]), stft_p, length) * scale
            estimates.append(est)
        self.last_latent_shape = tuple(z.shape)
        return estimates

    @torch.no_grad()
    def separate(self, mixture: AudioClip, visual) -> SeparationOutput:
        """Inference on a single clip; returns AudioClips."""
        if mixture.sample_rate != self.cfg.stft.sample_rate:
            raise ValueError(f"mixture at {mixture.sample_rate} Hz, model expects {self.cfg.stft.sample_rate} Hz")
        dtype = next(self.parameters()).dtype
        x = torch.as_tensor(mixture.samples, dtype=dtype).unsqueeze(0)
        feats = torch.as_tensor(visual.stacked(), dtype=dtype).unsqueeze(0)
        ests = self.forward(x, feats)
        clips = [AudioClip(e[0].double().numpy(), mixture.sample_rate) for e in ests]
        return SeparationOutput(clips[-1], clips, self.last_latent_shape)


def separator_forward(mixture: AudioClip, visual, model: Separator) -> SeparationOutput:
    return model.separate(mixture, visual)
