"""Video/image ingestion, frame containers, and patch extraction.

Frames hold integer samples (8- or 10-bit) in one of three layouts: ``mono``
(one plane), ``rgb`` (three full-resolution planes), or ``ycbcr420`` (luma
plus two half-resolution chroma planes).  All numeric processing elsewhere in
the package happens on normalized float samples in [0, 1]; conversion happens
only at the boundaries of this module.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError

COLORSPACES = ("mono", "rgb", "ycbcr420")

MIN_FRAME_DIM = 16


@dataclass(frozen=True)
class Frame:
    """One picture: a tuple of integer sample planes plus layout metadata."""

    planes: tuple[np.ndarray, ...]
    bit_depth: int = 8
    colorspace: str = "mono"

    def __post_init__(self):
        if self.colorspace not in COLORSPACES:
            raise FormatError(f"unknown colorspace {self.colorspace!r}")
        if self.bit_depth not in (8, 10):
            raise FormatError(f"bit depth must be 8 or 10, got {self.bit_depth}")
        expected = {"mono": 1, "rgb": 3, "ycbcr420": 3}[self.colorspace]
        if len(self.planes) != expected:
            raise FormatError(
                f"{self.colorspace} frames need {expected} planes, got {len(self.planes)}"
            )
        h, w = self.planes[0].shape
        if h < MIN_FRAME_DIM or w < MIN_FRAME_DIM:
            raise FormatError(f"frame dimensions {w}x{h} below minimum {MIN_FRAME_DIM}")
        for i, p in enumerate(self.planes):
            if p.ndim != 2:
                raise FormatError(f"plane {i} is not 2-D")
            if self.colorspace == "ycbcr420" and i > 0:
                if p.shape != (h // 2, w // 2):
                    raise FormatError(
                        f"chroma plane {i} shape {p.shape} inconsistent with 4:2:0 {w}x{h}"
                    )
            elif p.shape != (h, w):
                raise FormatError(f"plane {i} shape {p.shape} != {(h, w)}")
            if p.min() < 0 or p.max() > self.max_value:
                raise FormatError(f"plane {i} samples outside [0, {self.max_value}]")
        if self.colorspace == "ycbcr420" and (h % 2 or w % 2):
            raise FormatError(f"4:2:0 frames need even dimensions, got {w}x{h}")

    @property
    def height(self) -> int:
        return self.planes[0].shape[0]

    @property
    def width(self) -> int:
        return self.planes[0].shape[1]

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    def to_normalized(self) -> np.ndarray:
        """Return a (C, H, W) float32 array in [0, 1].

        4:2:0 chroma is upsampled to full resolution by sample replication so
        the result is always a dense channel stack.
        """
        peak = float(self.max_value)
        chans = []
        for i, p in enumerate(self.planes):
            x = p.astype(np.float32) / peak
            if self.colorspace == "ycbcr420" and i > 0:
                x = x.repeat(2, axis=0).repeat(2, axis=1)
            chans.append(x)
        return np.stack(chans, axis=0)

    @classmethod
    def from_normalized(
        cls, array: np.ndarray, bit_depth: int = 8, colorspace: str = "mono"
    ) -> "Frame":
        """Inverse of :meth:`to_normalized`: clip, scale, and round to integers."""
        if array.ndim != 3:
            raise FormatError(f"expected (C, H, W) array, got shape {array.shape}")
        peak = (1 << bit_depth) - 1
        scaled = np.clip(array, 0.0, 1.0) * peak
        dtype = np.uint8 if bit_depth == 8 else np.uint16
        planes = []
        for i in range(array.shape[0]):
            p = np.round(scaled[i]).astype(dtype)
            if colorspace == "ycbcr420" and i > 0:
                # box-average back to half resolution
                h, w = p.shape
                q = scaled[i].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
                p = np.round(q).astype(dtype)
            planes.append(p)
        return cls(planes=tuple(planes), bit_depth=bit_depth, colorspace=colorspace)

    def same_geometry(self, other: "Frame") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.bit_depth == other.bit_depth
            and self.colorspace == other.colorspace
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.same_geometry(other)
            and all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes))
        )


@dataclass
class VideoSequence:
    """An ordered run of same-geometry frames with timing and GoP metadata."""

    frames: list[Frame]
    fps: Fraction = Fraction(30, 1)
    gop_size: int = 8

    def __post_init__(self):
        if not self.frames:
            raise FormatError("sequence must contain at least one frame")
        if self.gop_size < 1:
            raise FormatError(f"gop_size must be >= 1, got {self.gop_size}")
        first = self.frames[0]
        for i, f in enumerate(self.frames[1:], start=1):
            if not first.same_geometry(f):
                raise FormatError(f"frame {i} geometry differs from frame 0")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i) -> Frame:
        return self.frames[i]

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def colorspace(self) -> str:
        return self.frames[0].colorspace

    @property
    def bit_depth(self) -> int:
        return self.frames[0].bit_depth


# ---------------------------------------------------------------------------
# YUV4MPEG2 reader/writer
# ---------------------------------------------------------------------------

_Y4M_COLOR_TAGS = {
    "C420": ("ycbcr420", 8),
    "C420jpeg": ("ycbcr420", 8),
    "C420mpeg2": ("ycbcr420", 8),
    "C420paldv": ("ycbcr420", 8),
    "C420p10": ("ycbcr420", 10),
    "Cmono": ("mono", 8),
    "Cmono10": ("mono", 10),
}


def _y4m_tag_for(colorspace: str, bit_depth: int) -> str:
    for tag, (cs, bd) in _Y4M_COLOR_TAGS.items():
        if cs == colorspace and bd == bit_depth:
            return tag
    raise FormatError(f"no y4m colorspace tag for {colorspace}/{bit_depth}-bit")


def _read_y4m(path: Path) -> VideoSequence:
    data = path.read_bytes()
    nl = data.find(b"\n")
    if nl < 0 or not data.startswith(b"YUV4MPEG2"):
        raise ParseError(f"{path}: not a YUV4MPEG2 stream")
    header = data[:nl].decode("ascii", errors="replace")
    width = height = None
    fps = Fraction(30, 1)
    colorspace, bit_depth = "ycbcr420", 8
    for token in header.split()[1:]:
        if token.startswith("W"):
            width = int(token[1:])
        elif token.startswith("H"):
            height = int(token[1:])
        elif token.startswith("F"):
            m = re.fullmatch(r"F(\d+):(\d+)", token)
            if not m:
                raise ParseError(f"{path}: bad frame-rate token {token!r}")
            fps = Fraction(int(m.group(1)), int(m.group(2)))
        elif token.startswith("C"):
            if token not in _Y4M_COLOR_TAGS:
                raise ParseError(f"{path}: unsupported colorspace token {token!r}")
            colorspace, bit_depth = _Y4M_COLOR_TAGS[token]
    if width is None or height is None:
        raise ParseError(f"{path}: header missing W/H")
    if colorspace == "ycbcr420" and (width % 2 or height % 2):
        raise FormatError(f"{path}: odd dimensions {width}x{height} for 4:2:0")

    dtype = np.uint8 if bit_depth == 8 else np.dtype("<u2")
    itemsize = dtype.itemsize if hasattr(dtype, "itemsize") else 1
    luma_n = width * height
    if colorspace == "ycbcr420":
        frame_samples = luma_n + 2 * (width // 2) * (height // 2)
    else:
        frame_samples = luma_n
    frame_bytes = frame_samples * np.dtype(dtype).itemsize

    frames = []
    pos = nl + 1
    while pos < len(data):
        fnl = data.find(b"\n", pos)
        if fnl < 0 or not data[pos:fnl].startswith(b"FRAME"):
            raise ParseError(f"{path}: missing FRAME marker at byte {pos}")
        pos = fnl + 1
        if pos + frame_bytes > len(data):
            raise ParseError(f"{path}: truncated frame payload")
        raw = np.frombuffer(data[pos : pos + frame_bytes], dtype=dtype)
        pos += frame_bytes
        y = raw[:luma_n].reshape(height, width)
        if colorspace == "ycbcr420":
            cn = (width // 2) * (height // 2)
            cb = raw[luma_n : luma_n + cn].reshape(height // 2, width // 2)
            cr = raw[luma_n + cn :].reshape(height // 2, width // 2)
            planes = (y.copy(), cb.copy(), cr.copy())
        else:
            planes = (y.copy(),)
        frames.append(Frame(planes=planes, bit_depth=bit_depth, colorspace=colorspace))
    if not frames:
        raise ParseError(f"{path}: stream has no frames")
    return VideoSequence(frames=frames, fps=fps)


def _write_y4m(seq: VideoSequence, path: Path) -> None:
    tag = _y4m_tag_for(seq.colorspace, seq.bit_depth)
    header = f"YUV4MPEG2 W{seq.width} H{seq.height} " \
             f"F{seq.fps.numerator}:{seq.fps.denominator} Ip A1:1 {tag}\n"
    dtype = np.uint8 if seq.bit_depth == 8 else np.dtype("<u2")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for frame in seq.frames:
            fh.write(b"FRAME\n")
            for plane in frame.planes:
                fh.write(np.ascontiguousarray(plane, dtype=dtype).tobytes())


# ---------------------------------------------------------------------------
# PNG-sequence directory reader/writer
# ---------------------------------------------------------------------------

def _read_png_dir(path: Path) -> VideoSequence:
    from PIL import Image

    names = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    if not names:
        raise ParseError(f"{path}: no .png files found")
    frames = []
    for name in names:
        with Image.open(name) as img:
            if img.mode == "L":
                planes = (np.asarray(img, dtype=np.uint8),)
                cs = "mono"
            elif img.mode == "RGB":
                arr = np.asarray(img, dtype=np.uint8)
                planes = tuple(arr[:, :, i] for i in range(3))
                cs = "rgb"
            else:
                raise FormatError(f"{name}: unsupported PNG mode {img.mode}")
        frames.append(Frame(planes=planes, bit_depth=8, colorspace=cs))
    first = frames[0]
    for i, f in enumerate(frames[1:], start=1):
        if not first.same_geometry(f):
            raise FormatError(f"{names[i]}: dimensions differ from {names[0]}")
    return VideoSequence(frames=frames)


def _write_png_dir(seq: VideoSequence, path: Path) -> None:
    from PIL import Image

    if seq.bit_depth != 8 or seq.colorspace not in ("mono", "rgb"):
        raise FormatError("PNG directories support 8-bit mono or rgb only")
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        if seq.colorspace == "mono":
            img = Image.fromarray(frame.planes[0], mode="L")
        else:
            img = Image.fromarray(np.stack(frame.planes, axis=-1), mode="RGB")
        img.save(path / f"frame_{i:06d}.png")


def load_video(path: str | os.PathLike, format: str | None = None) -> VideoSequence:
    """Load a sequence from a ``y4m`` file or a ``png-dir`` directory.

    Sample values are preserved exactly; there is no resampling or color
    conversion on ingest.
    """
    p = Path(path)
    if format is None:
        format = "png-dir" if p.is_dir() else "y4m"
    if format == "y4m":
        if not p.is_file():
            raise ParseError(f"{p}: file not found")
        return _read_y4m(p)
    if format == "png-dir":
        if not p.is_dir():
            raise ParseError(f"{p}: directory not found")
        return _read_png_dir(p)
    raise ValueError(f"unknown format {format!r}")


def save_video(seq: VideoSequence, path: str | os.PathLike, format: str | None = None) -> None:
    """Write a sequence; ``load_video(save_video(s))`` is sample-exact."""
    p = Path(path)
    if format is None:
        format = "y4m" if p.suffix.lower() == ".y4m" else "png-dir"
    if format == "y4m":
        _write_y4m(seq, p)
    elif format == "png-dir":
        _write_png_dir(seq, p)
    else:
        raise ValueError(f"unknown format {format!r}")


# ---------------------------------------------------------------------------
# Patch extraction
# ---------------------------------------------------------------------------

def patch_grid(extent: int, size: int, stride: int) -> list[int]:
    """Top/left offsets of patches covering ``extent`` samples."""
    if extent <= size:
        return [0]
    n = int(np.ceil((extent - size) / stride)) + 1
    return [i * stride for i in range(n)]


def extract_patches(frame: Frame, size: int, stride: int | None = None) -> list[np.ndarray]:
    """Cut the luma plane into ``size`` x ``size`` patches in row-major order.

    Patches that overhang the frame edge are completed with replicate padding
    so every returned patch has the full requested size.  Values are
    normalized float32 in [0, 1].
    """
    if stride is None:
        stride = size
    if size > frame.width or size > frame.height:
        raise FormatError(
            f"patch size {size} exceeds frame dimensions {frame.width}x{frame.height}"
        )
    luma = frame.planes[0].astype(np.float32) / frame.max_value
    ys = patch_grid(frame.height, size, stride)
    xs = patch_grid(frame.width, size, stride)
    pad_y = max(0, ys[-1] + size - frame.height)
    pad_x = max(0, xs[-1] + size - frame.width)
    if pad_y or pad_x:
        luma = np.pad(luma, ((0, pad_y), (0, pad_x)), mode="edge")
    return [luma[y : y + size, x : x + size].copy() for y in ys for x in xs]
