"""Binary checkpoint format.

Layout (little-endian)::

    b"CSWT" | u32 version=1 | u32 n
    n x tensor                        # parameters
    u32 m | m x tensor                # optimizer: "step", "m.<name>", "v.<name>"
    u32 len | UTF-8 JSON snapshot     # run config + optimizer hyper-parameters

    tensor := u16 name_len | name | u8 rank | rank x u64 dim | float32 data
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CSWT"
VERSION = 1


class FormatError(ValueError):
    pass


class LoadError(KeyError):
    pass


@dataclass
class Checkpoint:
    params: dict = field(default_factory=dict)
    optim: dict = field(default_factory=dict)
    snapshot: dict = field(default_factory=dict)


def _pack_tensors(out: list, tensors: dict) -> None:
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensors(self) -> dict:
        (n,) = self.unpack("<I")
        out = {}
        for _ in range(n):
            (ln,) = self.unpack("<H")
            try:
                name = self.take(ln).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError("tensor name is not UTF-8") from exc
            (rank,) = self.unpack("<B")
            shape = self.unpack(f"<{rank}Q")
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
            out[name] = data
        return out


def encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    _pack_tensors(parts, ckpt.params)
    _pack_tensors(parts, ckpt.optim)
    snap = json.dumps(ckpt.snapshot, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(snap)) + snap)
    return b"".join(parts)


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic, not a checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    params = r.tensors()
    optim = r.tensors()
    (ln,) = r.unpack("<I")
    try:
        snapshot = json.loads(r.take(ln).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("corrupt config snapshot") from exc
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(params, optim, snapshot)


def build(model, optimizer=None, config: dict | None = None) -> Checkpoint:
    params = {name: p.data for name, p in model.state_dict().items()}
    optim, snapshot = {}, {"config": config or {}}
    if optimizer is not None:
        st = optimizer.state
        optim["step"] = np.asarray(float(st.t))
        for name in optimizer.params:
            optim[f"m.{name}"] = st.m[name]
            optim[f"v.{name}"] = st.v[name]
        snapshot["optimizer"] = {
            "lr": st.lr, "weight_decay": st.weight_decay, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps, "t": st.t,
        }
    return Checkpoint(params, optim, snapshot)


def save_checkpoint(path, model, optimizer=None, config: dict | None = None) -> None:
    """Write atomically: a temp file in the same directory is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(build(model, optimizer, config)))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def apply_params(ckpt: Checkpoint, model, mode: str = "strict") -> dict:
    """Copy checkpoint tensors into ``model``.

    ``strict``: names and shapes must match exactly. ``intersect``: only
    name-and-shape matches are loaded. Nothing is mutated unless validation
    passes. Returns ``{"loaded": [...], "skipped": [...], "missing": [...]}``.
    """
    if mode not in ("strict", "intersect"):
        raise ValueError(f"unknown load mode {mode!r}")
    state = model.state_dict()
    loaded, skipped = [], []
    for name, arr in ckpt.params.items():
        if name in state and state[name].shape == arr.shape:
            loaded.append(name)
        else:
            skipped.append(name)
    missing = [n for n in state if n not in ckpt.params or n in skipped]
    if mode == "strict" and (skipped or missing):
        raise LoadError(f"strict load failed: missing {missing[:5]}, unexpected/mismatched {skipped[:5]}")
    for name in loaded:
        p = state[name]
        p.data = ckpt.params[name].astype(p.data.dtype)
    return {"loaded": loaded, "skipped": skipped, "missing": missing}


def apply_optimizer(ckpt: Checkpoint, optimizer) -> None:
    hp = ckpt.snapshot.get("optimizer")
    if hp is None:
        raise LoadError("checkpoint has no optimizer state")
    for name in optimizer.params:
        if f"m.{name}" not in ckpt.optim or f"v.{name}" not in ckpt.optim:
            raise LoadError(f"optimizer state missing for {name}")
    st = optimizer.state
    st.lr, st.weight_decay, st.beta1, st.beta2, st.eps, st.t = (
        hp["lr"], hp["weight_decay"], hp["beta1"], hp["beta2"], hp["eps"], int(hp["t"]),
    )
    for name in optimizer.params:
        st.m[name] = ckpt.optim[f"m.{name}"].copy()
        st.v[name] = ckpt.optim[f"v.{name}"].copy()
