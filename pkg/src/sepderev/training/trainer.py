"""Training regimes.

P  pretrain the dereverberator on (reverberant, anechoic) pairs
A  train the separator with the progressive loss
B  cascade a trained separator into a frozen dereverberator (inference only)
C  fine-tune both networks jointly, starting from the P (and by default A) weights

Every regime shares :func:`fit`: Adam, the plateau schedule, per-step loss
identity checks, best-validation checkpoints and a resumable trainer state.
Training data is drawn afresh every epoch from per-(seed, epoch, index)
generators, so resuming or reordering never changes what a given step sees.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from sepderev.audio import AudioClip
from sepderev.metrics import sisdr
from sepderev.mixing.sample import MixtureSample, generate_samples, sample_rng
from sepderev.models.checkpoint import (
    ModelCheckpoint, load_checkpoint, load_dereverb, load_separator, module_tensors,
    optimizer_tensors, restore_optimizer, restore_rng, rng_tensors, save_checkpoint, save_model,
)
from sepderev.models.dereverb import Dereverberator
from sepderev.models.separator import Separator
from sepderev.objectives import LossReport, dereverb_loss, joint_loss, progressive_loss, stft_loss_terms
from sepderev.training.config import TrainConfig
from sepderev.training.schedule import PlateauSchedule

log = logging.getLogger(__name__)

STATE_FILE = "trainer_state.ckpt"
EPOCH_LOG = "log.jsonl"
STEP_LOG = "steps.jsonl"


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train: dict
    val_loss: float
    lr: float
    events: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def collate(samples: list[MixtureSample], dtype=torch.float32) -> dict:
    def stack(arrs):
        return torch.as_tensor(np.stack(arrs), dtype=dtype)

    for s in samples:
        if s.anechoic_target is None:
            raise ValueError(f"sample {s.meta.get('id')} has no anechoic target")
    k = len(samples[0].ladder)
    return {
        "mixture": stack([s.mixture.samples for s in samples]),
        "visual": stack([s.visual.stacked() for s in samples]),
        "ladder": [stack([s.ladder[i].samples for s in samples]) for i in range(k)],
        "reverberant": stack([s.reverberant_target.samples for s in samples]),
        "anechoic": stack([s.anechoic_target.samples for s in samples]),
    }


def _batches(samples: list, batch_size: int):
    for i in range(0, len(samples), batch_size):
        yield samples[i:i + batch_size]


def _mean_report(reports: list[LossReport]) -> dict:
    if not reports:
        return {}
    per = np.mean([r.per_layer for r in reports], axis=0).tolist() if reports[0].per_layer else []
    return {"per_layer": per, "total": float(np.mean([r.total for r in reports])),
            "separate": float(np.mean([r.separate for r in reports])),
            "dereverb": float(np.mean([r.dereverb for r in reports])),
            "joint": float(np.mean([r.joint for r in reports]))}


def param_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in sorted(module.state_dict().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()


LossFn = Callable[[dict, bool], "tuple[torch.Tensor, LossReport]"]


class DataSource:
    """Training and validation samples for one run.

    With ``train_samples=None`` every epoch is freshly mixed from the
    configured synthetic bank (dynamic mixing); otherwise the given static
    set is reshuffled per epoch.
    """

    def __init__(self, cfg: TrainConfig, train_samples: list | None = None, val_samples: list | None = None):
        self.cfg = cfg
        self.mix_cfg = cfg.mix_config()
        self.static = train_samples
        self.bank = cfg.train_bank() if train_samples is None else None
        if val_samples is None:
            val_samples = generate_samples(cfg.val_bank(), self.mix_cfg, cfg.val_samples,
                                           cfg.seed + cfg.val_bank_seed_offset)
        self.val = val_samples

    def epoch(self, epoch: int) -> list[MixtureSample]:
        if self.static is None:
            return generate_samples(self.bank, self.mix_cfg, self.cfg.samples_per_epoch, self.cfg.seed, epoch)
        order = sample_rng(self.cfg.seed, epoch, 0x5E1).permutation(len(self.static))
        return [self.static[i] for i in order]


def _save_state(path: Path, models: dict, opt, sched: PlateauSchedule, epoch: int, step: int,
                stft_on: bool, cfg: TrainConfig) -> None:
    tensors = {}
    for name, m in models.items():
        tensors.update(module_tensors(m, f"{name}/"))
    opt_t, opt_info = optimizer_tensors(opt)
    tensors.update(opt_t)
    tensors.update(rng_tensors())
    meta = {"optimizer": opt_info, "schedule": sched.state_dict(), "epoch": epoch, "stft_on": stft_on}
    save_checkpoint(path, ModelCheckpoint("trainer", cfg.to_dict(), tensors, step, meta))


def fit(cfg: TrainConfig, out_dir, models: dict, loss_fn: LossFn, data: DataSource,
        resume: bool = False, max_epochs: int | None = None, max_steps: int | None = None,
        on_step: Callable[[LossReport], None] | None = None) -> list[EpochRecord]:
    """Shared training loop; returns the epoch records written to ``log.jsonl``.

    Best-validation weights are saved as ``<name>.ckpt`` and loaded back
    into ``models`` before returning.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = [p for m in models.values() for p in m.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr_init)
    sched = PlateauSchedule(cfg.lr_init, cfg.lr_halve_patience, cfg.stop_patience)
    start_epoch, step, stft_on = 0, 0, False
    state_path = out_dir / STATE_FILE
    records: list[EpochRecord] = []
    if resume and state_path.exists():
        ckpt = load_checkpoint(state_path, "trainer")
        for name, m in models.items():
            m.load_state_dict(ckpt.prefixed(f"{name}/"))
        restore_optimizer(opt, ckpt, ckpt.meta["optimizer"])
        sched.load_state_dict(ckpt.meta["schedule"])
        restore_rng(ckpt)
        start_epoch, step, stft_on = ckpt.meta["epoch"] + 1, ckpt.step, ckpt.meta["stft_on"]
        if (out_dir / EPOCH_LOG).exists():
            lines = (out_dir / EPOCH_LOG).read_text().splitlines()[:start_epoch]
            records = [EpochRecord(**json.loads(l)) for l in lines]
            (out_dir / EPOCH_LOG).write_text("".join(l + "\n" for l in lines))
        log.info("resumed from epoch %d (step %d)", start_epoch, step)
    else:
        for f in (EPOCH_LOG, STEP_LOG):
            (out_dir / f).unlink(missing_ok=True)
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))

    max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
    for epoch in range(start_epoch, max_epochs):
        if sched.stopped or (max_steps is not None and step >= max_steps):
            break
        events = []
        want_stft = cfg.stft_loss and sched.lr <= cfg.stft_loss_enable_lr_threshold
        if want_stft and not stft_on:
            stft_on = True
            # The objective changed scale; compare later epochs against the new objective only.
            sched.best, sched.since_best, sched.since_halving = float("inf"), 0, 0
            events.append("stft-loss-enabled")
        for g in opt.param_groups:
            g["lr"] = sched.lr
        for m in models.values():
            m.train()
        reports = []
        with open(out_dir / STEP_LOG, "a") as step_log:
            for batch_samples in _batches(data.epoch(epoch), cfg.batch_size):
                if max_steps is not None and step >= max_steps:
                    break
                batch = collate(batch_samples)
                opt.zero_grad()
                loss, report = loss_fn(batch, stft_on)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"numerical divergence at epoch {epoch} step {step}; last good state in {state_path}")
                report.check()
                loss.backward()
                if cfg.grad_clip:
                    nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                opt.step()
                step += 1
                reports.append(report)
                step_log.write(report.to_json() + "\n")
                if on_step is not None:
                    on_step(report)

        for m in models.values():
            m.eval()
        val_reports = []
        with torch.no_grad():
            for batch_samples in _batches(data.val, cfg.batch_size):
                _, r = loss_fn(collate(batch_samples), stft_on)
                val_reports.append(r)
        val_loss = float(np.mean([r.joint for r in val_reports]))
        lr_used = sched.lr
        events += sched.step(val_loss)
        if "improved" in events:
            for name, m in models.items():
                save_model(out_dir / f"{name}.ckpt", m, name, step=step, meta={"epoch": epoch, "val_loss": val_loss})
        rec = EpochRecord(epoch, _mean_report(reports), val_loss, lr_used, events)
        records.append(rec)
        with open(out_dir / EPOCH_LOG, "a") as f:
            f.write(rec.to_json() + "\n")
        log.info("epoch %d train %.4f val %.4f lr %.2e %s", epoch, rec.train.get("joint", float("nan")),
                 val_loss, lr_used, events)
        _save_state(state_path, models, opt, sched, epoch, step, stft_on, cfg)

    for name, m in models.items():
        best = out_dir / f"{name}.ckpt"
        if best.exists():
            m.load_state_dict(load_checkpoint(best, name).prefixed("model/"))
        m.eval()
    return records


# -- regime P ---------------------------------------------------------------

def dereverb_step(derev: Dereverberator, batch: dict, reverberant: torch.Tensor | None = None):
    """Spectrogram MSE of the dereverberator on ``reverberant`` (default: the reverberant target)."""
    x = batch["reverberant"] if reverberant is None else reverberant
    out, pred = derev(x)
    target = derev.target_logmag(batch["anechoic"], batch["reverberant"])
    return out, dereverb_loss(pred, target)


def pretrain_dereverb(cfg: TrainConfig, out_dir, data: DataSource | None = None, resume: bool = False,
                      max_epochs: int | None = None, max_steps: int | None = None) -> Path:
    """Regime P. Returns the path of the best dereverberator checkpoint."""
    torch.manual_seed(cfg.seed)
    data = data or DataSource(cfg)
    derev = Dereverberator(cfg.dereverb_config())

    def loss_fn(batch, stft_on):
        _, ld = dereverb_step(derev, batch)
        return ld, LossReport(dereverb=float(ld.detach()), joint=float(ld.detach()))

    fit(cfg, out_dir, {"dereverb": derev}, loss_fn, data, resume, max_epochs, max_steps)
    gain = [sisdr(derev.dereverb(s.reverberant_target), s.anechoic_target)
            - sisdr(s.reverberant_target, s.anechoic_target) for s in data.val]
    summary = {"val_sisdr_improvement_db": float(np.mean(gain))}
    (Path(out_dir) / "summary.json").write_text(json.dumps(summary, indent=2))
    return Path(out_dir) / "dereverb.ckpt"


# -- regime A ---------------------------------------------------------------

def separator_losses(sep: Separator, batch: dict, cfg: TrainConfig, stft_on: bool):
    """Progressive loss (+ STFT loss on E_K when enabled). Returns (estimates, L_separate, report)."""
    ests = sep(batch["mixture"], batch["visual"])
    prog = progressive_loss(ests, batch["ladder"])
    report = prog.report()
    separate = prog.total
    if stft_on:
        terms = stft_loss_terms(ests[-1], batch["ladder"][-1])
        sl = torch.stack([sc + lm for sc, lm in terms]).mean()
        separate = separate + cfg.stft_loss_weight * sl.double()
        report.stft_terms = {f"res{i}": {"spectral_convergence": float(sc.detach()), "log_magnitude": float(lm.detach())}
                             for i, (sc, lm) in enumerate(terms)}
    report.separate = float(separate.detach())
    report.joint = report.separate
    return ests, separate, report


def _check_k(sep: Separator, cfg: TrainConfig) -> None:
    if sep.cfg.num_blocks != cfg.K:
        raise ValueError(f"ladder K={cfg.K} does not match the separator's {sep.cfg.num_blocks} blocks")


def train_separator(cfg: TrainConfig, out_dir, data: DataSource | None = None, resume: bool = False,
                    max_epochs: int | None = None, max_steps: int | None = None, sep_init=None) -> Path:
    """Regime A. Returns the path of the best separator checkpoint."""
    torch.manual_seed(cfg.seed)
    sep = load_separator(sep_init) if sep_init else Separator(cfg.separator_config())
    _check_k(sep, cfg)
    data = data or DataSource(cfg)

    def loss_fn(batch, stft_on):
        _, separate, report = separator_losses(sep, batch, cfg, stft_on)
        return separate, report

    fit(cfg, out_dir, {"separator": sep}, loss_fn, data, resume, max_epochs, max_steps)
    return Path(out_dir) / "separator.ckpt"


# -- regime B ---------------------------------------------------------------

def _as_model(obj, loader):
    return loader(obj) if isinstance(obj, (str, Path)) else obj


def _check_compatible(sep: Separator, derev: Dereverberator) -> None:
    if sep.cfg.stft != derev.cfg.stft:
        raise ValueError(f"incompatible checkpoints: separator STFT {sep.cfg.stft} vs dereverb STFT {derev.cfg.stft}")


def run_cascade(sep_ckpt, derev_ckpt, mixture: AudioClip, visual) -> AudioClip:
    """Separation followed by dereverberation, no parameter updates."""
    sep = _as_model(sep_ckpt, load_separator)
    derev = _as_model(derev_ckpt, load_dereverb)
    _check_compatible(sep, derev)
    return derev.dereverb(sep.separate(mixture, visual).final_estimate)


def run_derev_first(derev_ckpt, sep_ckpt, mixture: AudioClip, visual) -> AudioClip:
    """Ablation arm: dereverberate the mixture, then separate."""
    sep = _as_model(sep_ckpt, load_separator)
    derev = _as_model(derev_ckpt, load_dereverb)
    _check_compatible(sep, derev)
    return sep.separate(derev.dereverb(mixture), visual).final_estimate


# -- regime C ---------------------------------------------------------------

def train_joint(cfg: TrainConfig, out_dir, derev_init, sep_init=None, data: DataSource | None = None,
                resume: bool = False, max_epochs: int | None = None, max_steps: int | None = None,
                on_step=None) -> tuple[Path, Path]:
    """Regime C: one optimizer over both networks minimising L_separate + L_dereverb.

    ``derev_init`` (a regime-P checkpoint) is mandatory; ``sep_init`` is
    normally the regime-A checkpoint, otherwise the separator starts fresh.
    """
    if derev_init is None:
        raise ValueError("regime C requires a pretrained dereverberation checkpoint (derev_init)")
    torch.manual_seed(cfg.seed)
    derev = load_dereverb(derev_init)
    if sep_init is None:
        log.warning("joint training with a freshly initialised separator")
        sep = Separator(cfg.separator_config())
    else:
        sep = load_separator(sep_init)
    _check_k(sep, cfg)
    _check_compatible(sep, derev)
    data = data or DataSource(cfg)

    def loss_fn(batch, stft_on):
        ests, separate, report = separator_losses(sep, batch, cfg, stft_on)
        _, ld = dereverb_step(derev, batch, reverberant=ests[-1])
        total = joint_loss(separate, ld, cfg.joint_weight)
        report.dereverb = float((cfg.joint_weight * ld).detach())
        report.joint = float(total.detach())
        return total, report

    fit(cfg, out_dir, {"separator": sep, "dereverb": derev}, loss_fn, data, resume, max_epochs, max_steps, on_step)
    return Path(out_dir) / "separator.ckpt", Path(out_dir) / "dereverb.ckpt"
