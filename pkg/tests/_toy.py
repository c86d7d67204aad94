"""Toy-scale end-to-end pipeline shared by the acceptance suite (and runnable on its own)."""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from sepderev.evaluation import run_ablation
from sepderev.metrics import sisdr
from sepderev.mixing.sample import generate_samples
from sepderev.models.checkpoint import load_dereverb, load_separator
from sepderev.training import TrainConfig
from sepderev.training.trainer import pretrain_dereverb, train_joint, train_separator

TEST_BANK_OFFSET = 2000  # speakers unseen by both the training and the validation banks
N_TEST = 120


def toy_config(regime: str, **kw) -> TrainConfig:
    base = dict(regime=regime, sample_rate=8000, chunk_seconds=1.0, K=2, fft_size=256, hop=128,
                channels=8, visual_channels=16, block_hidden=16, bank_speakers=64, bank_duration=2.5,
                samples_per_epoch=200, val_samples=40, seed=0)
    return TrainConfig(**{**base, **kw})


def held_out_samples(cfg: TrainConfig, n: int = N_TEST):
    bank = cfg.make_bank(cfg.seed + TEST_BANK_OFFSET)
    samples = generate_samples(bank, cfg.mix_config(), n, cfg.seed + TEST_BANK_OFFSET)
    for i, s in enumerate(samples):
        s.meta["id"] = f"test{i:04d}"
    return samples


@dataclass
class ToyRun:
    root: Path
    derev_p: Path
    sep_a: Path
    sep_c: Path
    derev_c: Path
    epochs: dict
    seconds: dict


def _epochs(out: Path) -> int:
    return len((out / "log.jsonl").read_text().splitlines())


def train_all(root, epochs_p: int = 20, epochs_a: int = 50, epochs_c: int = 10) -> ToyRun:
    root = Path(root)
    secs = {}
    t = time.time()
    derev_p = pretrain_dereverb(toy_config("P"), root / "P", max_epochs=epochs_p)
    secs["P"] = time.time() - t
    t = time.time()
    sep_a = train_separator(toy_config("A"), root / "A", max_epochs=epochs_a)
    secs["A"] = time.time() - t
    t = time.time()
    sep_c, derev_c = train_joint(toy_config("C"), root / "C", derev_p, sep_a, max_epochs=epochs_c)
    secs["C"] = time.time() - t
    eps = {k: _epochs(root / k) for k in "PAC"}
    return ToyRun(root, derev_p, sep_a, sep_c, derev_c, eps, secs)


def separation_gain(sep_path, samples) -> float:
    """Mean SI-SDR(E_K, reverberant target) minus SI-SDR(mixture, reverberant target)."""
    sep = load_separator(sep_path)
    with torch.no_grad():
        gains = [sisdr(sep.separate(s.mixture, s.visual).final_estimate, s.reverberant_target)
                 - sisdr(s.mixture, s.reverberant_target) for s in samples]
    return float(np.mean(gains))


def ablation(run: ToyRun, samples):
    return run_ablation(samples, "toy-test", load_separator(run.sep_a), load_dereverb(run.derev_p),
                        load_separator(run.sep_c), load_dereverb(run.derev_c))


if __name__ == "__main__":
    out = Path(sys.argv[1])
    run = train_all(out)
    samples = held_out_samples(toy_config("A"))
    result = {"epochs": run.epochs, "seconds": run.seconds,
              "sep_gain_db": separation_gain(run.sep_a, samples),
              "ablation": ablation(run, samples).to_dict()}
    print(json.dumps(result, indent=2))
