"""Differentiable torch STFT/iSTFT with the same framing as :mod:`sepderev.audio`."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from sepderev.audio import StftParams


def hann(params: StftParams, dtype=torch.float32, device=None) -> torch.Tensor:
    n = torch.arange(params.fft_size, dtype=torch.float64, device=device)
    return (0.5 - 0.5 * torch.cos(2.0 * math.pi * n / params.fft_size)).to(dtype)


def _pads(n_samples: int, params: StftParams) -> tuple[int, int]:
    n_frames = params.n_frames(n_samples)
    total = (n_frames - 1) * params.hop + params.fft_size
    left = params.fft_size // 2
    return left, total - n_samples - left


def stft(x: torch.Tensor, params: StftParams) -> torch.Tensor:
    """``[..., L]`` real waveform -> ``[..., F, N]`` complex spectrogram."""
    if x.shape[-1] < params.fft_size:
        raise ValueError(f"signal too short: {x.shape[-1]} samples < fft_size {params.fft_size}")
    lead = x.shape[:-1]
    x = x.reshape(-1, x.shape[-1])
    if params.center:
        x = F.pad(x, _pads(x.shape[-1], params))
    frames = x.unfold(-1, params.fft_size, params.hop) * hann(params, x.dtype, x.device)
    spec = torch.fft.rfft(frames, dim=-1).transpose(-1, -2)
    return spec.reshape(*lead, *spec.shape[-2:])


def istft(spec: torch.Tensor, params: StftParams, length: int) -> torch.Tensor:
    """``[..., F, N]`` complex spectrogram -> ``[..., length]`` waveform."""
    if spec.shape[-2] != params.n_bins:
        raise ValueError(f"expected {params.n_bins} frequency bins, got {spec.shape[-2]}")
    lead = spec.shape[:-2]
    spec = spec.reshape(-1, *spec.shape[-2:])
    n_frames = spec.shape[-1]
    win = hann(params, spec.real.dtype, spec.device)
    frames = torch.fft.irfft(spec.transpose(-1, -2), n=params.fft_size, dim=-1) * win
    total = (n_frames - 1) * params.hop + params.fft_size
    out = F.fold(frames.transpose(-1, -2), output_size=(1, total),
                 kernel_size=(1, params.fft_size), stride=(1, params.hop))
    env = F.fold((win ** 2).expand(n_frames, -1).T.unsqueeze(0), output_size=(1, total),
                 kernel_size=(1, params.fft_size), stride=(1, params.hop))
    env = torch.where(env > 1e-10, env, torch.ones_like(env))
    out = (out / env).reshape(out.shape[0], total)
    start = params.fft_size // 2 if params.center else 0
    out = out[:, start:start + length]
    return out.reshape(*lead, length)
