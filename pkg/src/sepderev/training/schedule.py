"""Validation-driven learning-rate halving and early stopping."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass
class PlateauSchedule:
    """Halve the LR after ``halve_patience`` epochs without a new best; stop after ``stop_patience``.

    An epoch improves when its validation loss is at least ``min_delta`` below
    the best so far. The halving counter restarts after every halving, the
    stop counter only on improvement, so with 3/10 a plateau halves at bad
    epochs 3, 6 and 9 and stops at 10. When both fire on the same epoch the
    stop wins and no halving is applied.
    """

    lr_init: float = 1e-3
    halve_patience: int = 3
    stop_patience: int = 10
    min_delta: float = 1e-6
    best: float = math.inf
    since_best: int = 0
    since_halving: int = 0
    halvings: int = 0
    stopped: bool = False

    def __post_init__(self):
        if self.stop_patience <= self.halve_patience:
            raise ValueError("stop_patience must exceed halve_patience")

    @property
    def lr(self) -> float:
        return self.lr_init / 2 ** self.halvings

    def step(self, val_loss: float) -> list[str]:
        """Record one epoch's validation loss; returns the events it triggered."""
        if self.stopped:
            raise RuntimeError("schedule already stopped")
        if not math.isfinite(val_loss):
            raise FloatingPointError(f"non-finite validation loss {val_loss}")
        if self.best - val_loss >= self.min_delta:
            self.best = val_loss
            self.since_best = 0
            self.since_halving = 0
            return ["improved"]
        self.since_best += 1
        self.since_halving += 1
        if self.since_best >= self.stop_patience:
            self.stopped = True
            return ["stopped"]
        if self.since_halving >= self.halve_patience:
            self.halvings += 1
            self.since_halving = 0
            return ["halved"]
        return []

    def state_dict(self) -> dict:
        return asdict(self)

    def load_state_dict(self, state: dict) -> None:
        for k, v in state.items():
            setattr(self, k, v)
