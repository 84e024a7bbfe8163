"""Reference byte-oriented range coder over per-element CDF tables.

Classic 32-bit carry-aware design: the encoder keeps (low, range) and emits a
byte whenever range drops below 2^24, propagating carries through a cache of
pending 0xFF bytes. Streams start with one dummy byte from the initial cache
flush and end with five flush bytes, so the fixed framing overhead is well
under 64 bits. Coder instances are single-use and single-threaded per stream;
independent streams may be coded concurrently.

The decoder must be driven with the exact tables the encoder used; table
construction is therefore part of the bitstream format (docs/FORMAT.md).
"""

from __future__ import annotations

from bisect import bisect_right

import numpy as np

from .entropy import CdfTable, SymbolPlane, TOTAL_FREQ

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int, total: int = TOTAL_FREQ) -> None:
        r = self.range // total
        self.low += r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        while self.range < _TOP:
            self.range = (self.range << 8) & _MASK32
            self._shift_low()

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            self.out.append((self.cache + carry) & 0xFF)
            for _ in range(self.cache_size - 1):
                self.out.append((0xFF + carry) & 0xFF)
            self.cache = (self.low >> 24) & 0xFF
            self.cache_size = 0
        self.cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 1  # skip the encoder's initial cache byte
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()
        self._r = 0

    def _next_byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        raise CorruptStreamError("range coder ran past end of stream")

    def decode_freq(self, total: int = TOTAL_FREQ) -> int:
        self._r = self.range // total
        f = self.code // self._r
        return total - 1 if f >= total else f

    def decode_update(self, cum_lo: int, cum_hi: int) -> None:
        r = self._r
        self.code -= r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        while self.range < _TOP:
            self.range = (self.range << 8) & _MASK32
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32


class CorruptStreamError(ValueError):
    """Raised when a stream cannot be decoded against its tables."""


def encode_plane(plane: SymbolPlane, table: CdfTable) -> bytes:
    """Entropy-code a symbol plane; element i uses table row i."""
    symbols = plane.symbols.reshape(-1)
    if table.cum.shape[0] != symbols.size:
        raise ValueError(f"table rows {table.cum.shape[0]} != symbols {symbols.size}")
    idx = symbols - table.v_min
    rows = np.arange(symbols.size)
    lows = table.cum[rows, idx].tolist()
    highs = table.cum[rows, idx + 1].tolist()
    enc = RangeEncoder()
    encode = enc.encode
    for lo, hi in zip(lows, highs):
        encode(lo, hi)
    return enc.finish()


def decode_plane(data: bytes, table: CdfTable, count: int) -> SymbolPlane:
    """Inverse of `encode_plane`; raises CorruptStreamError on truncated input."""
    if table.cum.shape[0] != count:
        raise ValueError(f"table rows {table.cum.shape[0]} != expected count {count}")
    if count and len(data) < 5:
        raise CorruptStreamError("stream shorter than coder framing")
    dec = RangeDecoder(data) if count else None
    rows = table.cum.tolist()
    v_min = table.v_min
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        f = dec.decode_freq()
        row = rows[i]
        s = bisect_right(row, f) - 1
        dec.decode_update(row[s], row[s + 1])
        out[i] = v_min + s
    return SymbolPlane(symbols=out, v_min=table.v_min, v_max=table.v_max)
