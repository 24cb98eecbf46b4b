"""Binary raster and checkpoint containers.

Raster file::

    CRG1\\n
    <dtype> <channels> <height> <width>\\n
    <payload: little-endian values, row-major, channel-last>

``dtype`` is one of ``u8``, ``f32``, ``f64``. Label files are ``u8`` with
0 meaning unlabeled.

Checkpoint file::

    CRGCKPT1\\n
    <tensor count>\\n
    <name> <shape as AxBxC> <dtype> <offset>\\n   (one line per tensor)
    <payloads concatenated; offsets are relative to the first payload byte>
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import FormatError

RASTER_MAGIC = b"CRG1\n"
CHECKPOINT_MAGIC = b"CRGCKPT1\n"
DTYPES = {"u8": np.dtype("<u1"), "f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _dtype_tag(arr: np.ndarray, dtype: str | None) -> str:
    if dtype is not None:
        if dtype not in DTYPES:
            raise FormatError(f"unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}")
        return dtype
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        return "u8"
    return "f32" if arr.dtype == np.float32 else "f64"


def encode_raster(arr, dtype: str | None = None) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise FormatError(f"raster must be 2-d or 3-d, got shape {arr.shape}")
    tag = _dtype_tag(arr, dtype)
    if tag == "u8" and arr.size and (arr.min() < 0 or arr.max() > 255):
        raise FormatError("u8 raster values must lie in [0, 255]")
    h, w, c = arr.shape
    header = f"{tag} {c} {h} {w}\n".encode("ascii")
    return RASTER_MAGIC + header + np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes()


def decode_raster(data: bytes) -> np.ndarray:
    """Inverse of :func:`encode_raster`; always returns ``(H, W, C)``."""
    if not data.startswith(RASTER_MAGIC):
        raise FormatError("not a raster file (bad magic)")
    end = data.find(b"\n", len(RASTER_MAGIC))
    if end < 0:
        raise FormatError("truncated raster header")
    try:
        tag, c, h, w = data[len(RASTER_MAGIC):end].decode("ascii").split()
        c, h, w = int(c), int(h), int(w)
    except ValueError:
        raise FormatError("malformed raster header") from None
    if tag not in DTYPES:
        raise FormatError(f"unsupported dtype {tag!r}")
    dt = DTYPES[tag]
    payload = data[end + 1:]
    if len(payload) != h * w * c * dt.itemsize:
        raise FormatError(f"payload is {len(payload)} bytes, header implies {h * w * c * dt.itemsize}")
    return np.frombuffer(payload, dtype=dt).reshape(h, w, c).copy()


def write_raster(path, arr, dtype: str | None = None) -> None:
    Path(path).write_bytes(encode_raster(arr, dtype))


def read_raster(path) -> np.ndarray:
    return decode_raster(Path(path).read_bytes())


def read_labels(path) -> np.ndarray:
    arr = read_raster(path)
    if arr.shape[2] != 1:
        raise FormatError(f"label raster must have 1 channel, got {arr.shape[2]}")
    return arr[..., 0].astype(np.int64)


def encode_checkpoint(tensors: dict[str, np.ndarray], dtype: str = "f64") -> bytes:
    dt = DTYPES[dtype]
    lines, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        if not name or any(ch.isspace() for ch in name):
            raise FormatError(f"invalid tensor name {name!r}")
        arr = np.asarray(arr, dtype=dt)
        shape = "x".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"{name} {shape} {dtype} {offset}\n")
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    head = CHECKPOINT_MAGIC + f"{len(tensors)}\n".encode("ascii") + "".join(lines).encode("ascii")
    return head + b"".join(blobs)


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError("not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)

    def line():
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated checkpoint manifest")
        text = data[pos:end].decode("ascii")
        pos = end + 1
        return text

    try:
        count = int(line())
        entries = []
        for _ in range(count):
            name, shape, tag, offset = line().split()
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            entries.append((name, dims, tag, int(offset)))
    except ValueError:
        raise FormatError("malformed checkpoint manifest") from None
    payload = memoryview(data)[pos:]
    out, cursor = {}, 0
    for name, dims, tag, offset in entries:
        if tag not in DTYPES:
            raise FormatError(f"tensor {name}: unsupported dtype {tag!r}")
        nbytes = int(np.prod(dims, dtype=np.int64)) * DTYPES[tag].itemsize
        if offset < cursor or offset + nbytes > len(payload):
            raise FormatError(f"tensor {name}: offset {offset} overlaps or runs past the payload")
        out[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=DTYPES[tag]).reshape(dims).copy()
        cursor = offset + nbytes
    if cursor != len(payload):
        raise FormatError(f"{len(payload) - cursor} trailing bytes after the last tensor")
    return out


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


def atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
