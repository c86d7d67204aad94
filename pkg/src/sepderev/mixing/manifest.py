"""On-disk datasets: ``manifest.jsonl`` + ``wav/`` + ``feat/``.

Each manifest line describes one sample::

    {"id": ..., "mix": "wav/<id>_mix.wav", "revtgt": ..., "anech": ...,
     "ladder": ["wav/<id>_ladder1.wav", ...], "feat": "feat/<id>.f32",
     "fps": 25, "initial_snr_db": ..., "step_db": 5.0, "meta": {...}}

WAVs are stored as 64-bit float so the mixing invariants survive a round
trip exactly; the interference is recovered as ``mix - revtgt``. Feature
files hold a 16-byte header (magic ``SDVF``, then uint32 N_v, D_lip,
D_expr, little-endian) followed by row-major float32 ``[N_v, D_lip+D_expr]``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from sepderev.mixing.sample import MixtureSample, ProgressiveLadder, VisualFeatureSequence
from sepderev.wavio import read_wav, write_wav

MANIFEST = "manifest.jsonl"
FEAT_MAGIC = b"SDVF"
WAV_DTYPE = "float64"


def write_features(path, visual: VisualFeatureSequence) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_v, d_lip = visual.lip.shape
    d_expr = visual.expression.shape[1]
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC + struct.pack("<III", n_v, d_lip, d_expr))
        f.write(visual.stacked().astype("<f4").tobytes())


def read_features(path, fps: int = 25) -> VisualFeatureSequence:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing feature file: {path}")
    raw = path.read_bytes()
    if raw[:4] != FEAT_MAGIC:
        raise ValueError(f"{path}: bad feature-file magic")
    n_v, d_lip, d_expr = struct.unpack("<III", raw[4:16])
    expected = n_v * (d_lip + d_expr) * 4
    if len(raw) - 16 != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(raw) - 16}")
    arr = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n_v, d_lip + d_expr).astype(np.float64)
    return VisualFeatureSequence(arr[:, :d_lip], arr[:, d_lip:], fps)


def write_manifest(samples: list[MixtureSample], dataset_dir) -> Path:
    root = Path(dataset_dir)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        sid = s.meta.get("id") or f"{i:05d}"
        rec = {"id": sid, "mix": f"wav/{sid}_mix.wav", "revtgt": f"wav/{sid}_revtgt.wav",
               "anech": f"wav/{sid}_anech.wav",
               "ladder": [f"wav/{sid}_ladder{k + 1}.wav" for k in range(len(s.ladder))],
               "feat": f"feat/{sid}.f32", "fps": s.visual.fps,
               "initial_snr_db": s.ladder.initial_snr_db, "step_db": s.ladder.step_db,
               "meta": {**s.meta, "id": sid}}
        write_wav(root / rec["mix"], s.mixture, WAV_DTYPE)
        write_wav(root / rec["revtgt"], s.reverberant_target, WAV_DTYPE)
        write_wav(root / rec["anech"], s.anechoic_target, WAV_DTYPE)
        for k, entry in enumerate(s.ladder.targets):
            write_wav(root / rec["ladder"][k], entry, WAV_DTYPE)
        write_features(root / rec["feat"], s.visual)
        lines.append(json.dumps(rec))
    path = root / MANIFEST
    path.write_text("".join(l + "\n" for l in lines))
    return path


def _load_record(root: Path, rec: dict) -> MixtureSample:
    sid = rec.get("id", "<unknown>")

    def wav(rel):
        p = root / rel
        if not p.exists():
            raise FileNotFoundError(f"sample {sid}: missing file {p}")
        return read_wav(p)

    mix, rev, anech = wav(rec["mix"]), wav(rec["revtgt"]), wav(rec["anech"])
    entries = [wav(p) for p in rec["ladder"]]
    feat_path = root / rec["feat"]
    if not feat_path.exists():
        raise FileNotFoundError(f"sample {sid}: missing file {feat_path}")
    visual = read_features(feat_path, rec.get("fps", 25))
    if len(mix) != len(rev):
        raise ValueError(f"sample {sid}: mixture and reverberant target lengths differ")
    ladder = ProgressiveLadder(rec["initial_snr_db"], rec["step_db"], len(entries), entries)
    return MixtureSample(mix, rev, anech, mix - rev, ladder, visual, rec["meta"])


def read_manifest(dataset_dir) -> list[MixtureSample]:
    """Load and validate every sample; errors name the offending sample or path."""
    root = Path(dataset_dir)
    path = root / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    samples = []
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{n}: invalid JSON ({exc})") from exc
        s = _load_record(root, rec)
        s.validate(name=rec.get("id", f"line {n}"))
        samples.append(s)
    return samples
