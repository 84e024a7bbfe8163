"""Bitstream container: fixed little-endian header, four substreams, CRC-32.

Layout (all little-endian, byte offsets from the start of the file):

    0   magic       4s   b"FCNR"
    4   version     u16  format version, currently 1
    6   height      u32  original image height (pre-padding)
    10  width       u32  original image width
    14  pad_h       u16  rows added by reflect padding
    16  pad_w       u16  columns added
    18  vp_l        3xf64  (t, theta, phi_view) of the left view
    42  vp_r        3xf64  of the right view
    66  fingerprint u64  weight fingerprint the decoder must match
    74  bounds      8xi32  (v_min, v_max) per plane in order z_l, z_r, y_l, y_r
    106 lengths     4xu32  payload byte length per plane, same order
    122 payload     the four substreams concatenated in that order
    ..  crc32       u32  CRC-32 (zlib) of the payload bytes

The header is decodable without model weights. Substream order is fixed by the
decode dependency chain: z_l first, then z_r, y_l, y_r.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from .networks import VisParams

MAGIC = b"FCNR"
FORMAT_VERSION = 1
PLANE_ORDER = ("z_l", "z_r", "y_l", "y_r")

_HEADER = struct.Struct("<4sHIIHH6dQ8i4I")
HEADER_SIZE = _HEADER.size


class CorruptBitstreamError(ValueError):
    """Bitstream failed structural validation (magic, sizes, checksum)."""


class WrongModelError(ValueError):
    """Header fingerprint does not match the supplied weights."""


@dataclass
class FcnrBitstream:
    height: int
    width: int
    pad_h: int
    pad_w: int
    vp_l: VisParams
    vp_r: VisParams
    fingerprint: int
    bounds: dict[str, tuple[int, int]]  # per plane, PLANE_ORDER keys
    substreams: dict[str, bytes]

    def __post_init__(self):
        for name in PLANE_ORDER:
            if name not in self.bounds or name not in self.substreams:
                raise ValueError(f"missing plane {name!r}")
            lo, hi = self.bounds[name]
            if hi < lo:
                raise ValueError(f"plane {name!r} has empty bounds [{lo},{hi}]")

    @property
    def payload_bytes(self) -> int:
        return sum(len(self.substreams[name]) for name in PLANE_ORDER)

    @property
    def bpp(self) -> float:
        """Coded payload bits per pixel over both views at the original size."""
        return self.payload_bytes * 8 / (2 * self.height * self.width)

    def serialize(self) -> bytes:
        bounds_flat = []
        for name in PLANE_ORDER:
            bounds_flat.extend(self.bounds[name])
        lengths = [len(self.substreams[name]) for name in PLANE_ORDER]
        header = _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            self.height,
            self.width,
            self.pad_h,
            self.pad_w,
            *self.vp_l.as_tuple(),
            *self.vp_r.as_tuple(),
            self.fingerprint,
            *bounds_flat,
            *lengths,
        )
        payload = b"".join(self.substreams[name] for name in PLANE_ORDER)
        return header + payload + struct.pack("<I", zlib.crc32(payload))

    @staticmethod
    def parse(data: bytes) -> "FcnrBitstream":
        if len(data) < HEADER_SIZE + 4:
            raise CorruptBitstreamError(f"file too short: {len(data)} bytes")
        fields = _HEADER.unpack_from(data, 0)
        magic, version = fields[0], fields[1]
        if magic != MAGIC:
            raise CorruptBitstreamError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise CorruptBitstreamError(f"unsupported format version {version}")
        height, width, pad_h, pad_w = fields[2:6]
        vp_l = VisParams(*fields[6:9])
        vp_r = VisParams(*fields[9:12])
        fingerprint = fields[12]
        bounds_flat = fields[13:21]
        lengths = fields[21:25]
        total = sum(lengths)
        if len(data) != HEADER_SIZE + total + 4:
            raise CorruptBitstreamError(
                f"size mismatch: header says {HEADER_SIZE + total + 4}, file is {len(data)}"
            )
        payload = data[HEADER_SIZE : HEADER_SIZE + total]
        (crc,) = struct.unpack_from("<I", data, HEADER_SIZE + total)
        if crc != zlib.crc32(payload):
            raise CorruptBitstreamError("payload checksum mismatch")
        substreams = {}
        bounds = {}
        offset = 0
        for i, name in enumerate(PLANE_ORDER):
            substreams[name] = payload[offset : offset + lengths[i]]
            offset += lengths[i]
            bounds[name] = (bounds_flat[2 * i], bounds_flat[2 * i + 1])
        return FcnrBitstream(
            height=height,
            width=width,
            pad_h=pad_h,
            pad_w=pad_w,
            vp_l=vp_l,
            vp_r=vp_r,
            fingerprint=fingerprint,
            bounds=bounds,
            substreams=substreams,
        )
