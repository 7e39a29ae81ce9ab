"""Bit-exact weight container.

Layout (all integers little-endian)::

    b"DAPW"                      magic
    u32  version                 currently 1
    u32  header_len
    header_len bytes             UTF-8 JSON: {"fingerprint", "seed", "config", "tensors":
                                 {name: {"dtype": "f32", "shape", "offset", "length"}}}
    payload                      contiguous IEEE-754 binary32 LE, offsets relative to payload start
    u32  crc32(payload)
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .model import WeightStore

MAGIC = b"DAPW"
VERSION = 1


class WeightFormatError(ValueError):
    pass


class MagicError(WeightFormatError):
    pass


class VersionError(WeightFormatError):
    pass


class ChecksumError(WeightFormatError):
    """Payload CRC mismatch or a file too short to hold its declared payload."""


class ShapeMismatchError(WeightFormatError):
    pass


class FingerprintError(WeightFormatError):
    pass


def to_bytes(ws: WeightStore) -> bytes:
    table = {}
    chunks = []
    offset = 0
    for name, arr in ws.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table[name] = {"dtype": "f32", "shape": [int(s) for s in arr.shape],
                       "offset": offset, "length": len(data)}
        chunks.append(data)
        offset += len(data)
    header = {"fingerprint": ws.fingerprint, "seed": ws.seed, "config": ws.config,
              "tensors": table}
    hbytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = b"".join(chunks)
    return b"".join([MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes, payload,
                     struct.pack("<I", zlib.crc32(payload))])


def from_bytes(blob: bytes) -> WeightStore:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise MagicError("not a DAPW weight file")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise VersionError(f"unsupported weight format version {version}")
    if len(blob) < 12 + hlen:
        raise ChecksumError("file truncated inside the header")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFormatError(f"corrupt header: {e}") from None
    table = header["tensors"]
    size = sum(t["length"] for t in table.values())
    start = 12 + hlen
    if len(blob) != start + size + 4:
        raise ChecksumError(f"file length {len(blob)} does not match declared payload "
                            f"({start + size + 4} bytes expected)")
    payload = blob[start:start + size]
    (crc,) = struct.unpack_from("<I", blob, start + size)
    if zlib.crc32(payload) != crc:
        raise ChecksumError("payload CRC-32 mismatch")
    tensors = {}
    for name, t in table.items():
        if t["dtype"] != "f32":
            raise WeightFormatError(f"{name}: unsupported dtype {t['dtype']}")
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        if t["length"] != 4 * n:
            raise ShapeMismatchError(f"{name}: shape {t['shape']} needs {4 * n} bytes, "
                                     f"table says {t['length']}")
        raw = payload[t["offset"]:t["offset"] + t["length"]]
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(t["shape"])
    return WeightStore(tensors, header["fingerprint"], int(header["seed"]), header.get("config", {}))


def save_weights(ws: WeightStore, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    blob = to_bytes(ws)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_weights(path, expect_fingerprint: str | None = None,
                 expect_shapes: dict[str, tuple] | None = None) -> WeightStore:
    ws = from_bytes(Path(path).read_bytes())
    if expect_fingerprint is not None and ws.fingerprint != expect_fingerprint:
        raise FingerprintError(f"weights fingerprint {ws.fingerprint} does not match "
                               f"config fingerprint {expect_fingerprint}")
    if expect_shapes is not None:
        if set(expect_shapes) != set(ws.tensors):
            missing = sorted(set(expect_shapes) - set(ws.tensors))[:3]
            extra = sorted(set(ws.tensors) - set(expect_shapes))[:3]
            raise ShapeMismatchError(f"tensor names differ: missing {missing}, extra {extra}")
        for name, shape in expect_shapes.items():
            if tuple(ws.tensors[name].shape) != tuple(shape):
                raise ShapeMismatchError(f"{name}: expected {tuple(shape)}, "
                                         f"got {ws.tensors[name].shape}")
    return ws
