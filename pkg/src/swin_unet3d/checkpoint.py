"""Binary checkpoint format for named parameter tensors.

Layout: magic ``SWUC``, little-endian u32 format version, then one record per
parameter: u32 name length, UTF-8 name bytes, u8 dtype tag (0 = float32,
1 = float64), u32 rank, u32 extents, raw little-endian values. Records carry
dotted parameter paths, so loading is order-independent; missing or extra
names are hard errors listing the offenders.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "apply_state"]

MAGIC = b"SWUC"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    """Malformed checkpoint file or parameter-set mismatch."""


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(state):
        arr = np.asarray(state[name], order="C")  # ascontiguousarray would promote 0-d to 1-d
        if arr.dtype not in _TAG_FOR_KIND:
            raise CheckpointError(f"parameter {name} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BI", _TAG_FOR_KIND[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _need(buf: bytes, offset: int, count: int, what: str) -> int:
    if offset + count > len(buf):
        raise CheckpointError(
            f"truncated checkpoint: need {count} bytes for {what} at byte {offset}, "
            f"file has {len(buf)}"
        )
    return offset + count


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    off = _need(buf, 0, 8, "header")
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r} at byte 0, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    state: dict[str, np.ndarray] = {}
    off = 8
    while off < len(buf):
        end = _need(buf, off, 4, "name length")
        (name_len,) = struct.unpack_from("<I", buf, off)
        off = end
        end = _need(buf, off, name_len, "name")
        name = buf[off:end].decode("utf-8")
        off = end
        end = _need(buf, off, 5, "dtype/rank")
        tag, rank = struct.unpack_from("<BI", buf, off)
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"unknown dtype tag {tag} for {name} at byte {off}")
        off = end
        end = _need(buf, off, 4 * rank, "extents")
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off = end
        dtype = _DTYPE_TAGS[tag]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        end = _need(buf, off, count * dtype.itemsize, f"values of {name}")
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape)
        off = end
        if name in state:
            raise CheckpointError(f"duplicate parameter {name} in checkpoint")
        state[name] = arr.copy()
    return state


def apply_state(model, state: dict[str, np.ndarray]) -> None:
    """Copy arrays into a model's parameters, hard-failing on any name mismatch."""
    params = model.parameters()
    missing = sorted(set(params) - set(state))
    extra = sorted(set(state) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"parameter names do not match: missing {missing or 'none'}, "
            f"unexpected {extra or 'none'}"
        )
    bad_shapes = sorted(
        name for name in params if params[name].shape != tuple(state[name].shape)
    )
    if bad_shapes:
        detail = ", ".join(
            f"{n} (model {params[n].shape} vs file {tuple(state[n].shape)})" for n in bad_shapes
        )
        raise CheckpointError(f"shape mismatch for: {detail}")
    for name, p in params.items():
        p.data = state[name].astype(p.dtype, copy=True)
