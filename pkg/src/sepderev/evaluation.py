"""Per-sample scoring, system evaluation, and the five-arm ablation report."""

from __future__ import annotations

import csv
import hashlib
import json
import subprocess
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from sepderev.audio import AudioClip
from sepderev.metrics import sisdr, stoi
from sepderev.mixing.sample import MixtureSample
from sepderev.models.dereverb import Dereverberator
from sepderev.models.separator import Separator
from sepderev.wavio import write_wav

System = Callable[[MixtureSample], AudioClip]

ARMS = (
    "Derev before Sep",
    "Separation only",
    "Sep before Derev",
    "Separation only (joint)",
    "Sep before Derev (joint)",
)
NOISY = "Noisy"
SOFT_MARGIN_DB = 0.3


def external_pesq(cmd: str, estimate: AudioClip, reference: AudioClip) -> float:
    """Run ``<cmd> <reference.wav> <estimate.wav>`` and parse the last number it prints."""
    with tempfile.TemporaryDirectory() as tmp:
        ref_p, est_p = Path(tmp) / "ref.wav", Path(tmp) / "est.wav"
        write_wav(ref_p, reference)
        write_wav(est_p, estimate)
        out = subprocess.run([cmd, str(ref_p), str(est_p)], capture_output=True, text=True, check=True).stdout
    return float(out.split()[-1])


def score(output: AudioClip, sample: MixtureSample, pesq_cmd: str | None = None) -> dict:
    if len(output) != len(sample.anechoic_target):
        raise ValueError(f"output length {len(output)} != reference length {len(sample.anechoic_target)}")
    row = {
        "sisdr_anech": sisdr(output, sample.anechoic_target),
        "stoi_anech": stoi(output, sample.anechoic_target),
        "sisdr_rev": sisdr(output, sample.reverberant_target),
        "stoi_rev": stoi(output, sample.reverberant_target),
    }
    if pesq_cmd:
        row["pesq_anech"] = external_pesq(pesq_cmd, output, sample.anechoic_target)
    return row


def evaluate_system(name: str, system: System, samples: list[MixtureSample], pesq_cmd: str | None = None,
                    out_dir=None) -> list[dict]:
    """Score ``system`` on every sample; failures are recorded in the row's ``error`` field."""
    rows = []
    for s in samples:
        sid = s.meta.get("id", "")
        row = {"system": name, "id": sid, "snr_db": s.meta.get("snr_db")}
        try:
            out = system(s)
            row.update(score(out, s, pesq_cmd))
            if out_dir is not None:
                write_wav(Path(out_dir) / f"{sid}_{_slug(name)}.wav", out)
        except ValueError as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def _slug(name: str) -> str:
    return "".join(c.lower() if c.isalnum() else "_" for c in name).strip("_")


def aggregate(rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    agg = {"n_samples": len(ok), "n_skipped": len(rows) - len(ok)}
    for key in ("sisdr_anech", "stoi_anech", "sisdr_rev", "stoi_rev", "pesq_anech"):
        vals = [r[key] for r in ok if key in r]
        if vals:
            agg[key] = float(np.mean(vals))
    return agg


# -- system builders --------------------------------------------------------

def noisy_system() -> System:
    return lambda s: s.mixture


def separation_system(sep: Separator) -> System:
    return lambda s: sep.separate(s.mixture, s.visual).final_estimate


def cascade_system(sep: Separator, derev: Dereverberator) -> System:
    return lambda s: derev.dereverb(sep.separate(s.mixture, s.visual).final_estimate)


def derev_first_system(derev: Dereverberator, sep: Separator) -> System:
    return lambda s: sep.separate(derev.dereverb(s.mixture), s.visual).final_estimate


# -- ablation ---------------------------------------------------------------

@dataclass
class AblationRow:
    name: str
    present: bool
    n_samples: int = 0
    sisdr: float | None = None
    stoi: float | None = None
    sisdr_rev: float | None = None
    stoi_rev: float | None = None
    pesq: float | None = None
    sample_digest: str = ""


@dataclass
class AblationReport:
    rows: list
    dataset_id: str
    config: dict = field(default_factory=dict)
    trends: dict = field(default_factory=dict)

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"dataset_id": self.dataset_id, "config": self.config, "trends": self.trends,
                "rows": [asdict(r) for r in self.rows]}

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jp, cp = out_dir / "ablation.json", out_dir / "ablation.csv"
        jp.write_text(json.dumps(self.to_dict(), indent=2))
        with open(cp, "w", newline="") as f:
            cols = ["name", "present", "n_samples", "pesq", "stoi", "sisdr", "stoi_rev", "sisdr_rev"]
            w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow(asdict(r))
        return jp, cp


def check_trends(report: AblationReport) -> dict:
    """Ordering checks on mean SI-SDR against the anechoic reference.

    (a) "Derev before Sep" is strictly the worst of the five arms.
    (b) the jointly trained cascade is at least as good as the frozen one;
        a shortfall under 0.3 dB is a soft failure.
    """
    present = {r.name: r for r in report.rows if r.present and r.name in ARMS}
    trends = {}
    if len(present) < len(ARMS):
        missing = sorted(set(ARMS) - set(present))
        return {"skipped": f"missing arms: {missing}"}
    worst = present["Derev before Sep"].sisdr
    others = [r.sisdr for n, r in present.items() if n != "Derev before Sep"]
    trends["derev_first_worst"] = {"status": "pass" if worst < min(others) else "fail",
                                   "derev_first": worst, "best_other_min": min(others)}
    joint, frozen = present["Sep before Derev (joint)"].sisdr, present["Sep before Derev"].sisdr
    gap = joint - frozen
    status = "pass" if gap >= 0 else ("soft-fail" if gap > -SOFT_MARGIN_DB else "fail")
    trends["joint_beats_frozen"] = {"status": status, "joint": joint, "frozen": frozen, "gap_db": gap}
    return trends


def run_ablation(samples: list[MixtureSample], dataset_id: str, sep_a: Separator | None = None,
                 derev_p: Dereverberator | None = None, sep_c: Separator | None = None,
                 derev_c: Dereverberator | None = None, pesq_cmd: str | None = None,
                 config: dict | None = None) -> AblationReport:
    """Evaluate the noisy baseline and the five arms on the identical sample list."""
    arms: dict[str, System | None] = {
        NOISY: noisy_system(),
        "Derev before Sep": derev_first_system(derev_p, sep_a) if sep_a and derev_p else None,
        "Separation only": separation_system(sep_a) if sep_a else None,
        "Sep before Derev": cascade_system(sep_a, derev_p) if sep_a and derev_p else None,
        "Separation only (joint)": separation_system(sep_c) if sep_c else None,
        "Sep before Derev (joint)": cascade_system(sep_c, derev_c) if sep_c and derev_c else None,
    }
    per_arm = {name: evaluate_system(name, fn, samples, pesq_cmd) for name, fn in arms.items() if fn}
    # Keep only samples every evaluated arm scored, so all rows share one sample set.
    ok_ids = set.intersection(*({r["id"] for r in rows if "error" not in r} for rows in per_arm.values()))
    ordered = [s.meta.get("id", "") for s in samples if s.meta.get("id", "") in ok_ids]
    digest = hashlib.sha256("\n".join(ordered).encode()).hexdigest()[:16]
    rows = []
    for name, fn in arms.items():
        if fn is None:
            rows.append(AblationRow(name, present=False))
            continue
        agg = aggregate([r for r in per_arm[name] if r["id"] in ok_ids])
        rows.append(AblationRow(name, True, agg["n_samples"], agg["sisdr_anech"], agg["stoi_anech"],
                                agg["sisdr_rev"], agg["stoi_rev"], agg.get("pesq_anech"), digest))
    report = AblationReport(rows, dataset_id, config or {})
    report.trends = check_trends(report)
    return report
