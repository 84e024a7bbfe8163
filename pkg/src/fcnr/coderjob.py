"""Serialized coder jobs: the binary boundary for swappable range coders.

A job batch carries whole symbol planes together with their quantized CDF
tables, so an external coder can reproduce the reference coder's byte streams
without any model or probability math. All integers are little-endian; the
layout is documented byte-exact in docs/FORMAT.md.

    batch   = "FCJ1" u8(direction) u32(n_planes) plane*
    plane   = u64(n_symbols) i64(v_min) i64(v_max) cum
              + symbols (encode)  |  u64(stream_len) stream (decode)
    cum     = n_symbols rows of (K+1) u32, K = v_max - v_min + 1
    symbols = n_symbols i64

    results = "FCR1" u32(n_planes)
              + per plane: u64(len) bytes (encode) | u64(n) i64 values (decode)
"""

from __future__ import annotations

import struct

import numpy as np

from .entropy import TOTAL_FREQ, CdfTable, SymbolPlane
from .rangecoder import decode_plane, encode_plane

JOB_MAGIC = b"FCJ1"
RESULT_MAGIC = b"FCR1"
ENCODE, DECODE = 0, 1


class JobFormatError(ValueError):
    """Malformed job/result bytes; the message carries the byte offset."""


def _table_valid(cum: np.ndarray) -> bool:
    return (
        cum.ndim == 2
        and cum.shape[1] >= 2
        and bool((cum[:, 0] == 0).all())
        and bool((cum[:, -1] == TOTAL_FREQ).all())
        and bool((np.diff(cum.astype(np.int64), axis=1) > 0).all())
    )


def serialize_jobs(direction: int, planes: list[dict]) -> bytes:
    """planes: dicts with v_min, v_max, cum, and symbols (encode) or stream+count (decode)."""
    if direction not in (ENCODE, DECODE):
        raise ValueError(f"direction must be 0 or 1, got {direction}")
    out = [JOB_MAGIC, struct.pack("<BI", direction, len(planes))]
    for p in planes:
        cum = np.ascontiguousarray(p["cum"], dtype=np.uint32)
        k = p["v_max"] - p["v_min"] + 1
        if cum.shape[1] != k + 1:
            raise ValueError(f"cum width {cum.shape[1]} != K+1 = {k + 1}")
        n = p["count"] if direction == DECODE else int(np.asarray(p["symbols"]).size)
        if cum.shape[0] != n:
            raise ValueError(f"cum rows {cum.shape[0]} != symbol count {n}")
        out.append(struct.pack("<Qqq", n, p["v_min"], p["v_max"]))
        out.append(cum.tobytes())
        if direction == ENCODE:
            sym = np.ascontiguousarray(p["symbols"], dtype=np.int64).reshape(-1)
            if sym.size and (sym.min() < p["v_min"] or sym.max() > p["v_max"]):
                raise ValueError("symbols outside declared bounds")
            out.append(sym.tobytes())
        else:
            stream = bytes(p["stream"])
            out.append(struct.pack("<Q", len(stream)))
            out.append(stream)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise JobFormatError(f"truncated at offset {self.pos}: need {n} bytes")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_jobs(data: bytes) -> tuple[int, list[dict]]:
    r = _Reader(data)
    if r.take(4) != JOB_MAGIC:
        raise JobFormatError("bad job magic at offset 0")
    direction, n_planes = r.unpack("<BI")
    if direction not in (ENCODE, DECODE):
        raise JobFormatError(f"bad direction byte at offset 4: {direction}")
    planes = []
    for _ in range(n_planes):
        n, v_min, v_max = r.unpack("<Qqq")
        k = v_max - v_min + 1
        if k < 1:
            raise JobFormatError(f"empty alphabet before offset {r.pos}")
        cum_off = r.pos
        cum = np.frombuffer(r.take(4 * n * (k + 1)), dtype="<u4").reshape(n, k + 1)
        if n and not _table_valid(cum):
            raise JobFormatError(f"invalid cdf table at offset {cum_off}")
        plane = {"v_min": int(v_min), "v_max": int(v_max), "cum": cum, "count": int(n)}
        if direction == ENCODE:
            sym = np.frombuffer(r.take(8 * n), dtype="<i8")
            if n and (sym.min() < v_min or sym.max() > v_max):
                raise JobFormatError(f"symbols out of bounds before offset {r.pos}")
            plane["symbols"] = sym
        else:
            (stream_len,) = r.unpack("<Q")
            plane["stream"] = r.take(stream_len)
        planes.append(plane)
    if r.pos != len(data):
        raise JobFormatError(f"{len(data) - r.pos} trailing bytes at offset {r.pos}")
    return direction, planes


def run_reference_jobs(data: bytes) -> bytes:
    """Execute a job batch with the reference coder; returns serialized results."""
    direction, planes = parse_jobs(data)
    out = [RESULT_MAGIC, struct.pack("<I", len(planes))]
    for p in planes:
        table = CdfTable(cum=np.asarray(p["cum"], dtype=np.uint32), v_min=p["v_min"], v_max=p["v_max"])
        if direction == ENCODE:
            plane = SymbolPlane(
                symbols=np.asarray(p["symbols"], dtype=np.int64),
                v_min=p["v_min"],
                v_max=p["v_max"],
            )
            stream = encode_plane(plane, table)
            out.append(struct.pack("<Q", len(stream)))
            out.append(stream)
        else:
            decoded = decode_plane(p["stream"], table, p["count"])
            out.append(struct.pack("<Q", decoded.symbols.size))
            out.append(np.ascontiguousarray(decoded.symbols, dtype=np.int64).tobytes())
    return b"".join(out)


def parse_results(data: bytes, direction: int) -> list:
    """Encode results parse to byte streams, decode results to symbol arrays."""
    r = _Reader(data)
    if r.take(4) != RESULT_MAGIC:
        raise JobFormatError("bad result magic at offset 0")
    (n_planes,) = r.unpack("<I")
    out = []
    for _ in range(n_planes):
        (n,) = r.unpack("<Q")
        if direction == ENCODE:
            out.append(r.take(n))
        else:
            out.append(np.frombuffer(r.take(8 * n), dtype="<i8").copy())
    if r.pos != len(data):
        raise JobFormatError(f"{len(data) - r.pos} trailing bytes at offset {r.pos}")
    return out
