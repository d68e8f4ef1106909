"""Binary container of named float64 arrays.

Layout (little-endian)::

    magic      4 bytes
    version    u32
    records    repeated until EOF:
        name_len  u32
        name      UTF-8 bytes
        rank      u32
        dims      u32 * rank
        payload   f64 * prod(dims)
"""

from __future__ import annotations

import os
import struct

import numpy as np

VERSION = 1
MAX_RANK = 8
MAX_NAME = 1024


class RecordFormatError(ValueError):
    """Malformed container. ``defect`` names what was wrong."""

    def __init__(self, defect: str, detail: str = ""):
        super().__init__(f"{defect}: {detail}" if detail else defect)
        self.defect = defect


def encode_records(magic: bytes, records: dict[str, np.ndarray]) -> bytes:
    parts = [magic, struct.pack("<I", VERSION)]
    for name, arr in records.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def write_records(path: str | os.PathLike, magic: bytes, records: dict[str, np.ndarray]) -> None:
    data = encode_records(magic, records)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def decode_records(data: bytes, magic: bytes) -> dict[str, np.ndarray]:
    if len(data) < 8:
        raise RecordFormatError("truncated header", f"{len(data)} bytes")
    if data[:4] != magic:
        raise RecordFormatError("bad magic", f"expected {magic!r}, got {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise RecordFormatError("unsupported version", str(version))
    pos = 8
    out: dict[str, np.ndarray] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise RecordFormatError("truncated record", f"{what} at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        if name_len > MAX_NAME:
            raise RecordFormatError("name too long", str(name_len))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RecordFormatError("invalid record name", str(exc)) from None
        (rank,) = struct.unpack("<I", take(4, f"rank of {name!r}"))
        if rank > MAX_RANK:
            raise RecordFormatError("rank overflow", f"{name!r} has rank {rank}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(8 * count, f"payload of {name!r}")
        if name in out:
            raise RecordFormatError("duplicate record", name)
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    return out


def read_records(path: str | os.PathLike, magic: bytes) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_records(fh.read(), magic)


def record_spans(data: bytes) -> dict[str, bytes]:
    """Raw bytes of each record (header included), keyed by name. Assumes a valid container."""
    pos = 8
    spans = {}
    while pos < len(data):
        start = pos
        (name_len,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4:pos + 4 + name_len].decode("utf-8")
        pos += 4 + name_len
        (rank,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
        pos += 4 + 4 * rank + 8 * (int(np.prod(dims, dtype=np.int64)) if rank else 1)
        spans[name] = data[start:pos]
    return spans
