"""Versioned single-file checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"SDRVCKPT"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header
    ...       raw tensor blobs, concatenated in header order

The header carries ``kind`` (``separator``, ``dereverb`` or ``trainer``),
``config`` (the model config echo), ``step``, free-form ``meta``, and a
``tensors`` list of ``{name, dtype, shape, offset, nbytes}`` where
``offset`` is relative to the first blob byte. Model weights are float32;
optimizer moments keep their own dtype and the torch RNG state is a uint8
blob named ``rng/torch``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SDRVCKPT"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": (torch.float32, np.dtype("<f4")),
    "float64": (torch.float64, np.dtype("<f8")),
    "int64": (torch.int64, np.dtype("<i8")),
    "uint8": (torch.uint8, np.dtype("u1")),
}
_TORCH_TO_NAME = {v[0]: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    kind: str
    config: dict
    tensors: dict
    step: int = 0
    meta: dict = field(default_factory=dict)

    def prefixed(self, prefix: str) -> dict:
        n = len(prefix)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    entries, blobs, offset = [], [], 0
    for name, t in ckpt.tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _TORCH_TO_NAME:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {t.dtype}")
        dname = _TORCH_TO_NAME[t.dtype]
        raw = t.numpy().astype(_DTYPES[dname][1], copy=False).tobytes()
        entries.append({"name": name, "dtype": dname, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "format_version": FORMAT_VERSION, "kind": ckpt.kind, "config": ckpt.config,
        "step": int(ckpt.step), "meta": ckpt.meta, "tensors": entries,
    }).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    tmp.replace(path)


def load_checkpoint(path, expected_kind: str | None = None) -> ModelCheckpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads version {FORMAT_VERSION}")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: holds a {kind!r} checkpoint, expected {expected_kind!r}")
    base = 20 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(data):
            raise CheckpointError(f"{path}: truncated blob for tensor {e['name']!r}")
        tdtype, ndtype = _DTYPES[e["dtype"]]
        arr = np.frombuffer(data, dtype=ndtype, count=e["nbytes"] // ndtype.itemsize, offset=start)
        tensors[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy()).to(tdtype)
    return ModelCheckpoint(kind, header["config"], tensors, header.get("step", 0), header.get("meta", {}))


def module_tensors(module: torch.nn.Module, prefix: str = "model/") -> dict:
    return {prefix + k: v for k, v in module.state_dict().items()}


def optimizer_tensors(opt: torch.optim.Optimizer, prefix: str = "optim/") -> tuple[dict, dict]:
    """Split an optimizer state dict into tensors and a JSON-able remainder."""
    sd = opt.state_dict()
    tensors, scalars = {}, {}
    for idx, st in sd["state"].items():
        for key, val in st.items():
            name = f"{prefix}state/{idx}/{key}"
            if torch.is_tensor(val):
                tensors[name] = val
            else:
                scalars[name] = val
    return tensors, {"param_groups": sd["param_groups"], "scalars": scalars}


def restore_optimizer(opt: torch.optim.Optimizer, ckpt: ModelCheckpoint, info: dict, prefix: str = "optim/") -> None:
    state: dict = {}
    for name, val in ckpt.prefixed(prefix + "state/").items():
        idx, key = name.split("/")
        state.setdefault(int(idx), {})[key] = val
    for name, val in info.get("scalars", {}).items():
        idx, key = name[len(prefix + "state/"):].split("/")
        state.setdefault(int(idx), {})[key] = val
    opt.load_state_dict({"state": state, "param_groups": info["param_groups"]})


def rng_tensors() -> dict:
    return {"rng/torch": torch.get_rng_state()}


def restore_rng(ckpt: ModelCheckpoint) -> None:
    if "rng/torch" in ckpt.tensors:
        torch.set_rng_state(ckpt.tensors["rng/torch"].to(torch.uint8))


def save_model(path, model: torch.nn.Module, kind: str, step: int = 0, meta: dict | None = None,
               optimizer: torch.optim.Optimizer | None = None) -> None:
    tensors = module_tensors(model)
    meta = dict(meta or {})
    if optimizer is not None:
        opt_t, opt_info = optimizer_tensors(optimizer)
        tensors.update(opt_t)
        meta["optimizer"] = opt_info
    tensors.update(rng_tensors())
    save_checkpoint(path, ModelCheckpoint(kind, model.cfg.to_dict(), tensors, step, meta))


def load_separator(path):
    from sepderev.models.separator import Separator, SeparatorConfig

    ckpt = load_checkpoint(path, "separator")
    model = Separator(SeparatorConfig(**ckpt.config))
    model.load_state_dict(ckpt.prefixed("model/"))
    return model.eval()


def load_dereverb(path):
    from sepderev.models.dereverb import DereverbConfig, Dereverberator

    ckpt = load_checkpoint(path, "dereverb")
    model = Dereverberator(DereverbConfig(**ckpt.config))
    model.load_state_dict(ckpt.prefixed("model/"))
    return model.eval()
