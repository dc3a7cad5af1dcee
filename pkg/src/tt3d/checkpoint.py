"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic b"ATT3" | u32 version | u32 config_len | config JSON (utf-8)
    | 32-byte sha256 of the config JSON
    | u32 n_tensors | tensors | 32-byte sha256 of all tensor bytes

Each tensor: u16 name_len | name utf-8 | u8 ndim | u32 dims... | u64 nbytes
| payload (little-endian f32). Payloads are f32 by format; runs that keep
parameters in f32 (the default) round-trip bitwise.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_digest
from .errors import IntegrityError, StructuralError
from .model import ModelSnapshot

__all__ = ["CheckpointState", "save_checkpoint", "load_checkpoint"]

MAGIC = b"ATT3"
VERSION = 1


@dataclass
class CheckpointState:
    """Everything needed to resume or serve a run."""

    config: ExperimentConfig
    params: dict[str, np.ndarray]
    step: int = 0
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_step: int = 0
    rng_state: dict | None = None

    def snapshot(self) -> ModelSnapshot:
        return ModelSnapshot(self.config.model, {k: v.copy() for k, v in self.params.items()})


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray):
    nb = name.encode()
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<I", d))
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    buf.write(struct.pack("<Q", len(payload)))
    buf.write(payload)


def _read_tensor(view: memoryview, off: int):
    (nlen,) = struct.unpack_from("<H", view, off)
    off += 2
    name = bytes(view[off:off + nlen]).decode()
    off += nlen
    (ndim,) = struct.unpack_from("<B", view, off)
    off += 1
    shape = []
    for _ in range(ndim):
        (d,) = struct.unpack_from("<I", view, off)
        shape.append(d)
        off += 4
    (nbytes,) = struct.unpack_from("<Q", view, off)
    off += 8
    if off + nbytes > len(view):
        raise IntegrityError(f"tensor {name!r} payload truncated")
    want = int(np.prod(shape)) * 4 if shape else 4
    if nbytes != want:
        raise IntegrityError(f"tensor {name!r} payload length {nbytes} != {want}")
    arr = np.frombuffer(view, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
    off += nbytes
    return name, np.asarray(arr), off


def save_checkpoint(state: CheckpointState, path) -> None:
    """Write atomically (tmp + rename): an interrupted save never clobbers."""
    meta = {
        "config": state.config.to_dict(),
        "step": state.step,
        "adam_step": state.adam_step,
        "rng_state": state.rng_state,
    }
    config_json = json.dumps(meta, sort_keys=True).encode()

    tensors = io.BytesIO()
    names = list(state.params) + [f"adam.m.{n}" for n in state.adam_m] \
        + [f"adam.v.{n}" for n in state.adam_v]
    arrays = list(state.params.values()) + list(state.adam_m.values()) + list(state.adam_v.values())
    for name, arr in zip(names, arrays):
        _write_tensor(tensors, name, arr)
    tensor_bytes = tensors.getvalue()

    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(struct.pack("<I", len(config_json)))
    out.write(config_json)
    out.write(hashlib.sha256(config_json).digest())
    out.write(struct.pack("<I", len(names)))
    out.write(tensor_bytes)
    out.write(hashlib.sha256(tensor_bytes).digest())

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(out.getvalue())
    tmp.replace(path)


def load_checkpoint(path, expect_config: ExperimentConfig | None = None) -> CheckpointState:
    """Read and verify; refuses corrupted files and mismatched configs."""
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if len(raw) < 12 or bytes(view[:4]) != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    (clen,) = struct.unpack_from("<I", view, 8)
    off = 12
    if off + clen + 32 > len(raw):
        raise IntegrityError("checkpoint header truncated")
    config_json = bytes(view[off:off + clen])
    off += clen
    stored_digest = bytes(view[off:off + 32])
    off += 32
    if hashlib.sha256(config_json).digest() != stored_digest:
        raise IntegrityError("config block corrupted (digest mismatch)")
    meta = json.loads(config_json.decode())
    config = ExperimentConfig.from_dict(meta["config"])
    if expect_config is not None and config_digest(expect_config) != config_digest(config):
        raise StructuralError(
            "checkpoint was trained with a different config; refusing to load "
            f"(stored digest {config_digest(config)[:12]}, expected {config_digest(expect_config)[:12]})")

    (n_tensors,) = struct.unpack_from("<I", view, off)
    off += 4
    tensor_start = off
    params: dict[str, np.ndarray] = {}
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name, arr, off = _read_tensor(view, off)
        if name.startswith("adam.m."):
            adam_m[name[len("adam.m."):]] = arr
        elif name.startswith("adam.v."):
            adam_v[name[len("adam.v."):]] = arr
        else:
            params[name] = arr
    if off + 32 > len(raw):
        raise IntegrityError("tensor section truncated")
    if hashlib.sha256(view[tensor_start:off]).digest() != bytes(view[off:off + 32]):
        raise IntegrityError("tensor payload corrupted (digest mismatch)")

    dt = config.model.np_dtype
    params = {k: v.astype(dt) for k, v in params.items()}
    adam_m = {k: v.astype(dt) for k, v in adam_m.items()}
    adam_v = {k: v.astype(dt) for k, v in adam_v.items()}
    return CheckpointState(config=config, params=params, step=meta.get("step", 0),
                           adam_m=adam_m, adam_v=adam_v,
                           adam_step=meta.get("adam_step", 0),
                           rng_state=meta.get("rng_state"))
