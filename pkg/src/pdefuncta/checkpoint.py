"""GFMC checkpoints: a flat table of named little-endian tensors.

Layout: ``b"GFMC"``, u32 version, u32 entry count, then per entry
u16 name length, UTF-8 name, u8 dtype code, u8 rank, u32 dims, payload.
Dtype 0 is float64; dtype 1 is raw UTF-8 bytes (used for the config text).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from os import PathLike

import numpy as np

from .data import _Reader

MAGIC = b"GFMC"
VERSION = 1
F64, TEXT = 0, 1

CONFIG_KEY = "meta/config"
EPOCH_KEY = "meta/epoch"
LATENT_PREFIX = "latent/"
OPTIM_PREFIX = "optim/"


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    config_text: str = ""
    epoch: int = 0

    def params(self) -> dict[str, np.ndarray]:
        return {
            k: v for k, v in self.tensors.items() if not k.startswith((LATENT_PREFIX, OPTIM_PREFIX, "meta/"))
        }

    def latents(self) -> dict[str, np.ndarray]:
        n = len(LATENT_PREFIX)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(LATENT_PREFIX)}

    def optimizer_state(self) -> dict[str, np.ndarray]:
        n = len(OPTIM_PREFIX)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(OPTIM_PREFIX)}


def _entry(name: str, code: int, dims: tuple, payload: bytes) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointFormatError(f"tensor name too long: {name[:40]}...")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, len(dims))
    return head + struct.pack(f"<{len(dims)}I", *dims) + payload


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = []
    for name, arr in ckpt.tensors.items():
        if name.startswith("meta/"):
            raise CheckpointFormatError(f"tensor name {name!r} uses the reserved 'meta/' prefix")
        arr = np.asarray(arr, dtype=np.float64)
        parts.append(_entry(name, F64, arr.shape, arr.astype("<f8").tobytes()))
    text = ckpt.config_text.encode("utf-8")
    parts.append(_entry(CONFIG_KEY, TEXT, (len(text),), text))
    parts.append(_entry(EPOCH_KEY, F64, (), struct.pack("<d", float(ckpt.epoch))))
    return MAGIC + struct.pack("<II", VERSION, len(parts)) + b"".join(parts)


def loads_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    try:
        if r.take(4, "magic") != MAGIC:
            raise CheckpointFormatError(f"bad magic {buf[:4]!r} at offset 0, expected {MAGIC!r}")
        version, count = r.unpack("<II", "header")
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version} at offset 4")
        ckpt = Checkpoint()
        for i in range(count):
            (n,) = r.unpack("<H", f"entry {i} name length")
            name = r.take(n, f"entry {i} name").decode("utf-8")
            code, rank = r.unpack("<BB", f"entry {i} dtype/rank")
            dims = r.unpack(f"<{rank}I", f"entry {i} dims")
            size = int(np.prod(dims))
            if code == F64:
                arr = np.frombuffer(r.take(8 * size, f"entry {i} payload"), dtype="<f8").reshape(dims).astype(np.float64)
                if name == EPOCH_KEY:
                    ckpt.epoch = int(arr)
                else:
                    ckpt.tensors[name] = arr
            elif code == TEXT:
                text = r.take(size, f"entry {i} payload").decode("utf-8")
                if name == CONFIG_KEY:
                    ckpt.config_text = text
            else:
                raise CheckpointFormatError(f"unknown dtype code {code} for entry {name!r}")
    except CheckpointFormatError:
        raise
    except ValueError as exc:  # truncation from the shared reader
        raise CheckpointFormatError(str(exc)) from None
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    return ckpt


def save_checkpoint(path: str | PathLike, ckpt: Checkpoint) -> None:
    """Write atomically so an interrupted save never leaves a torn file."""
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps_checkpoint(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path: str | PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())


def capture(model, functaset=None, optimizer=None, config_text: str = "", epoch: int = 0) -> Checkpoint:
    """Snapshot parameters, latents and optimizer state."""
    tensors = {p.name: p.data.copy() for p in model.parameters()}
    if hasattr(model, "buffers"):
        tensors.update({k: np.array(v, dtype=np.float64) for k, v in model.buffers().items()})
    if functaset is not None:
        tensors.update({LATENT_PREFIX + sid: z.copy() for sid, z in functaset.latents.items()})
    if optimizer is not None and hasattr(optimizer, "state"):
        tensors.update({OPTIM_PREFIX + k: np.asarray(v, dtype=np.float64) for k, v in optimizer.state().items()})
    return Checkpoint(tensors, config_text, epoch)


def restore(ckpt: Checkpoint, model, functaset=None, optimizer=None) -> None:
    params = ckpt.params()
    for p in model.parameters():
        if p.name not in params:
            raise CheckpointFormatError(f"checkpoint lacks parameter {p.name!r}")
        p.assign(params[p.name])
    if hasattr(model, "load_buffers"):
        model.load_buffers(params)
    if functaset is not None:
        for sid, z in ckpt.latents().items():
            functaset[sid] = z.copy()
    state = ckpt.optimizer_state()
    if optimizer is not None and state and hasattr(optimizer, "load_state"):
        optimizer.load_state(state)
