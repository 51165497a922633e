"""Binary trace files for detector-rate captures.

Layout, all little-endian:

    offset  size  field
    0       4     magic, ASCII "FTRC"
    4       2     format version, uint16 (currently 1)
    6       2     reserved, uint16, written as 0
    8       8     sample_rate_hz, float64
    16      8     sample_count, uint64
    24      ...   samples, float32 * sample_count

Samples are real post-detector values. Writing then reading returns the
float32-rounded samples bit-exactly.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FTRC"
VERSION = 1
_HEADER = struct.Struct("<4sHHdQ")


class TraceFormatError(ValueError):
    pass


def write_trace(path, samples: np.ndarray, sample_rate_hz: float) -> None:
    data = np.ascontiguousarray(samples, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, 0, float(sample_rate_hz), data.size))
        f.write(data.tobytes())


def read_trace(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TraceFormatError(f"{path}: truncated header")
        magic, version, _, rate, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise TraceFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise TraceFormatError(f"{path}: unsupported version {version}")
        payload = f.read(4 * count)
    if len(payload) != 4 * count:
        raise TraceFormatError(f"{path}: expected {count} samples, file short")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64), rate
