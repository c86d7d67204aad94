"""Training losses and the per-step loss report.

All losses take ``[..., L]`` torch tensors and reduce to a scalar by
averaging over leading (batch) dimensions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import torch

from sepderev import tf
from sepderev.audio import StftParams

SISDR_EPS = 1e-8
STFT_MAG_FLOOR = 1e-7
STFT_LOSS_RESOLUTIONS = (StftParams(512, 128), StftParams(1024, 256), StftParams(2048, 512))


def sisdr_loss(estimate: torch.Tensor, reference: torch.Tensor, eps: float = SISDR_EPS) -> torch.Tensor:
    """Negative SI-SDR in dB (lower is better), epsilon inside both energies, no clipping."""
    if estimate.shape != reference.shape:
        raise ValueError(f"shape mismatch: {tuple(estimate.shape)} vs {tuple(reference.shape)}")
    # float64 keeps the logged loss identities exact to ~1e-12.
    estimate, reference = estimate.double(), reference.double()
    est = estimate - estimate.mean(dim=-1, keepdim=True)
    ref = reference - reference.mean(dim=-1, keepdim=True)
    ref_energy = (ref ** 2).sum(dim=-1, keepdim=True)
    if bool((ref_energy <= 0).any()):
        raise ValueError("sisdr_loss reference is silent")
    target = (est * ref).sum(dim=-1, keepdim=True) / ref_energy * ref
    noise = est - target
    ratio = ((target ** 2).sum(dim=-1) + eps) / ((noise ** 2).sum(dim=-1) + eps)
    return -(10.0 * torch.log10(ratio)).mean()


@dataclass
class LossReport:
    per_layer: list = field(default_factory=list)
    total: float = 0.0
    separate: float = 0.0
    dereverb: float = 0.0
    joint: float = 0.0
    stft_terms: dict = field(default_factory=dict)

    def check(self, tol: float = 1e-9) -> None:
        """Assert the report's internal identities."""
        values = [*self.per_layer, self.total, self.separate, self.dereverb, self.joint]
        if not all(math.isfinite(v) for v in values):
            raise FloatingPointError(f"non-finite loss in report: {values}")
        if self.per_layer and abs(self.total - sum(self.per_layer) / len(self.per_layer)) > tol:
            raise AssertionError(f"L_total {self.total} != mean of per-layer losses {self.per_layer}")
        if abs(self.joint - (self.separate + self.dereverb)) > tol:
            raise AssertionError(f"L_joint {self.joint} != L_separate {self.separate} + L_dereverb {self.dereverb}")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        return cls(**json.loads(line))


@dataclass
class ProgressiveResult:
    """Differentiable progressive loss plus the per-layer tensors it averaged."""

    total: torch.Tensor
    per_layer: list

    def report(self) -> LossReport:
        per = [float(v.detach()) for v in self.per_layer]
        total = float(self.total.detach())
        return LossReport(per_layer=per, total=total, separate=total, joint=total)


def progressive_loss(estimates, ladder_targets) -> ProgressiveResult:
    """Mean over blocks of the SI-SDR loss between E_k and the k-th ladder entry.

    Args:
        estimates: K tensors ``[B, L]`` (E_1..E_K).
        ladder_targets: K tensors ``[B, L]``; the last is the reverberant target.
    """
    if len(estimates) != len(ladder_targets):
        raise ValueError(f"K mismatch: {len(estimates)} estimates vs {len(ladder_targets)} ladder entries")
    if not estimates:
        raise ValueError("progressive_loss needs at least one layer")
    per_layer = [sisdr_loss(e, t) for e, t in zip(estimates, ladder_targets)]
    return ProgressiveResult(torch.stack(per_layer).mean(), per_layer)


def stft_loss_terms(estimate: torch.Tensor, reference: torch.Tensor, resolutions=STFT_LOSS_RESOLUTIONS):
    """Per-resolution (spectral convergence, log-magnitude L1) pairs."""
    if estimate.shape != reference.shape:
        raise ValueError(f"shape mismatch: {tuple(estimate.shape)} vs {tuple(reference.shape)}")
    longest = max(p.fft_size for p in resolutions)
    if estimate.shape[-1] < longest:
        raise ValueError(f"clip of {estimate.shape[-1]} samples is shorter than the largest fft {longest}")
    terms = []
    for p in resolutions:
        mag_e = tf.stft(estimate, p).abs()
        mag_r = tf.stft(reference, p).abs()
        diff = torch.linalg.vector_norm(mag_r - mag_e, dim=(-2, -1))
        sc = (diff / torch.linalg.vector_norm(mag_r, dim=(-2, -1)).clamp_min(STFT_MAG_FLOOR)).mean()
        logmag = (torch.log(mag_r.clamp_min(STFT_MAG_FLOOR)) - torch.log(mag_e.clamp_min(STFT_MAG_FLOOR))).abs().mean()
        terms.append((sc, logmag))
    return terms


def stft_loss(estimate: torch.Tensor, reference: torch.Tensor, resolutions=STFT_LOSS_RESOLUTIONS) -> torch.Tensor:
    """Multi-resolution magnitude loss: (spectral convergence + log-mag L1), averaged over resolutions."""
    terms = stft_loss_terms(estimate, reference, resolutions)
    return torch.stack([sc + lm for sc, lm in terms]).mean()


def dereverb_loss(predicted_logmag: torch.Tensor, target_logmag: torch.Tensor) -> torch.Tensor:
    """Mean squared error between log-magnitude spectrograms."""
    if predicted_logmag.shape != target_logmag.shape:
        raise ValueError(f"shape mismatch: {tuple(predicted_logmag.shape)} vs {tuple(target_logmag.shape)}")
    return ((predicted_logmag.double() - target_logmag.double()) ** 2).mean()


def joint_loss(separate: torch.Tensor, dereverb: torch.Tensor, weight: float = 1.0) -> torch.Tensor:
    """L_joint = L_separate + weight * L_dereverb (weight defaults to the plain sum)."""
    if not (torch.isfinite(separate).all() and torch.isfinite(dereverb).all()):
        raise FloatingPointError("joint_loss received a non-finite term")
    return separate + weight * dereverb
