"""Versioned binary container of named tensors.

Layout (all integers little-endian)::

    magic   8 bytes  b"AXHCKPT\\0"
    version u16
    count   u32
    count x entry:
        name_len u16, name utf-8
        dtype    u8   (see DTYPES)
        ndim     u8, dims u64 * ndim
        nbytes   u64, payload (C order, little-endian)

Run metadata (architecture, normalization statistics, RNG state) travels as a
JSON document in a uint8 entry named ``__meta__``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"AXHCKPT\0"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_CODES = {dt: code for code, dt in DTYPES.items()}
META_KEY = "__meta__"


def _dtype_code(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    for code, known in DTYPES.items():
        if dt == known or (dt.kind == known.kind and dt.itemsize == known.itemsize):
            return code
    raise FormatError(f"cannot store dtype {arr.dtype}")


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = dict(tensors)
    if meta is not None:
        entries[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(struct.pack("<Q", len(payload)) + payload)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<HI", blob, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 14
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode()
            pos += name_len
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            if code not in DTYPES or pos + nbytes > len(blob):
                raise FormatError(f"{path}: corrupt entry {name!r} at byte {pos}")
            arr = np.frombuffer(blob, dtype=DTYPES[code], count=nbytes // DTYPES[code].itemsize, offset=pos)
            tensors[name] = arr.reshape(shape).copy()
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"{path}: truncated at byte {pos}") from exc
    meta = {}
    if META_KEY in tensors:
        meta = json.loads(tensors.pop(META_KEY).tobytes().decode())
    return tensors, meta
