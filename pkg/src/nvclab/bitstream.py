"""Bit-exact bitstream container.

Layout (all integers big-endian):

    magic "NVC1" (4 bytes)
    version     u16
    width       u16
    height      u16
    bit depth   u8
    gop_size    u8
    model id    u32
    lambda idx  u8
    frame count u32
    ext length  u16, then extension bytes
        colorspace u8 (0 mono, 1 rgb, 2 ycbcr420)
        fps numerator u16, fps denominator u16
    per frame:
        type        u8 (0 = I, 1 = P)
        seed count  u8, then that many u32 dither seeds
        three length-prefixed (u32) segments in fixed order:
            motion, residual-or-intra, guided weights

The container decodes without any encoder-side state: everything a decoder
needs beyond the model checkpoint is in the header and frame records.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import DecodeError, ParseError

MAGIC = b"NVC1"
VERSION = 1

FRAME_I = 0
FRAME_P = 1

_COLORSPACE_CODES = {"mono": 0, "rgb": 1, "ycbcr420": 2}
_COLORSPACE_NAMES = {v: k for k, v in _COLORSPACE_CODES.items()}


@dataclass
class FrameRecord:
    frame_type: int
    seeds: tuple[int, ...]
    motion: bytes = b""
    payload: bytes = b""        # intra or residual segment
    guided: bytes = b""

    @property
    def payload_bits(self) -> int:
        """Coded content bits, excluding record framing."""
        return 8 * (len(self.motion) + len(self.payload) + len(self.guided))


@dataclass
class BitstreamHeader:
    width: int
    height: int
    bit_depth: int
    gop_size: int
    model_id: int
    lambda_index: int
    frame_count: int
    colorspace: str = "mono"
    fps: Fraction = Fraction(30, 1)


@dataclass
class Bitstream:
    header: BitstreamHeader
    frames: list[FrameRecord] = field(default_factory=list)

    @property
    def payload_bits(self) -> int:
        return sum(f.payload_bits for f in self.frames)

    def bpp(self) -> float:
        h = self.header
        return self.payload_bits / (h.width * h.height * max(h.frame_count, 1))

    def to_bytes(self) -> bytes:
        h = self.header
        out = bytearray()
        out += MAGIC
        out += struct.pack(
            ">HHHBBIBI",
            VERSION,
            h.width,
            h.height,
            h.bit_depth,
            h.gop_size,
            h.model_id & 0xFFFFFFFF,
            h.lambda_index,
            len(self.frames),
        )
        ext = struct.pack(
            ">BHH",
            _COLORSPACE_CODES[h.colorspace],
            h.fps.numerator,
            h.fps.denominator,
        )
        out += struct.pack(">H", len(ext)) + ext
        for fr in self.frames:
            out += struct.pack(">BB", fr.frame_type, len(fr.seeds))
            for s in fr.seeds:
                out += struct.pack(">I", s & 0xFFFFFFFF)
            for seg in (fr.motion, fr.payload, fr.guided):
                out += struct.pack(">I", len(seg)) + seg
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        view = memoryview(data)
        if len(view) < 4 or bytes(view[:4]) != MAGIC:
            raise ParseError("not an NVC1 bitstream")
        pos = 4

        def take(fmt: str):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(view):
                raise DecodeError("truncated bitstream header")
            vals = struct.unpack(fmt, view[pos : pos + size])
            pos += size
            return vals

        (version, width, height, bit_depth, gop_size, model_id,
         lambda_index, frame_count) = take(">HHHBBIBI")
        if version != VERSION:
            raise ParseError(f"unsupported bitstream version {version}")
        (ext_len,) = take(">H")
        if pos + ext_len > len(view):
            raise DecodeError("truncated extension block")
        ext = bytes(view[pos : pos + ext_len])
        pos += ext_len
        colorspace = "mono"
        fps = Fraction(30, 1)
        if len(ext) >= 5:
            code, num, den = struct.unpack(">BHH", ext[:5])
            if code not in _COLORSPACE_NAMES:
                raise ParseError(f"unknown colorspace code {code}")
            colorspace = _COLORSPACE_NAMES[code]
            fps = Fraction(num, den or 1)

        header = BitstreamHeader(
            width=width,
            height=height,
            bit_depth=bit_depth,
            gop_size=gop_size,
            model_id=model_id,
            lambda_index=lambda_index,
            frame_count=frame_count,
            colorspace=colorspace,
            fps=fps,
        )
        frames = []
        for _ in range(frame_count):
            frame_type, n_seeds = take(">BB")
            if frame_type not in (FRAME_I, FRAME_P):
                raise DecodeError(f"unknown frame type {frame_type}")
            seeds = tuple(take(">I")[0] for _ in range(n_seeds))
            segments = []
            for _ in range(3):
                (seg_len,) = take(">I")
                if pos + seg_len > len(view):
                    raise DecodeError("truncated frame segment")
                segments.append(bytes(view[pos : pos + seg_len]))
                pos += seg_len
            frames.append(
                FrameRecord(
                    frame_type=frame_type,
                    seeds=seeds,
                    motion=segments[0],
                    payload=segments[1],
                    guided=segments[2],
                )
            )
        if pos != len(view):
            raise DecodeError(f"{len(view) - pos} trailing bytes after last frame")
        return cls(header=header, frames=frames)
