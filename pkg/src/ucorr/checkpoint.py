"""Binary checkpoint format.

Layout (little-endian):
    magic "UCKP", format version u32,
    parameter records: count u32, then per record
        name length u32, UTF-8 name, rank u32, extents u32 * rank, f32 payload,
    optimizer velocity records in the same framing,
    epoch u32, step u64, current learning rate f32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

MAGIC = b"UCKP"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict = field(default_factory=dict)       # name -> np.ndarray (f32)
    velocities: dict = field(default_factory=dict)   # name -> np.ndarray (f32)
    epoch: int = 0
    step: int = 0
    lr: float = 0.0


def _write_records(fh, records: dict):
    fh.write(struct.pack("<I", len(records)))
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        fh.write(struct.pack("<I", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read_records(fh) -> dict:
    (count,) = struct.unpack("<I", fh.read(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", fh.read(4))
        name = fh.read(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", fh.read(4))
        extents = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        n = int(np.prod(extents)) if rank else 1
        data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(extents)
        out[name] = data.copy()
    return out


def save_checkpoint(path, params: dict[str, Tensor], velocities: dict,
                    epoch: int, step: int, lr: float):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_records(fh, {k: p.data for k, p in params.items()})
        _write_records(fh, velocities)
        fh.write(struct.pack("<IQf", epoch, step, lr))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = _read_records(fh)
        velocities = _read_records(fh)
        epoch, step, lr = struct.unpack("<IQf", fh.read(4 + 8 + 4))
    return Checkpoint(params=params, velocities=velocities,
                      epoch=epoch, step=step, lr=lr)
