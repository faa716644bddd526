"""Synthetic pictures and clips for desk-scale training and testing.

Everything here is seeded and returns either normalized float32 arrays in
[0, 1] or :class:`~nvclab.media.Frame` objects, so experiments are fully
self-contained without external datasets.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.ndimage import gaussian_filter

from .media import Frame, VideoSequence


def smooth_noise(size: int, seed: int, smoothness: float = 4.0) -> np.ndarray:
    """Band-limited random texture in [0, 1]."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(size, size))
    x = gaussian_filter(x, sigma=smoothness, mode="wrap")
    lo, hi = x.min(), x.max()
    return ((x - lo) / (hi - lo + 1e-12)).astype(np.float32)


def checkerboard(size: int, cell: int = 8, lo: float = 0.2, hi: float = 0.8) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    board = ((yy // cell + xx // cell) % 2).astype(np.float32)
    return (lo + board * (hi - lo)).astype(np.float32)


def gradient_ramp(size: int, horizontal: bool = True) -> np.ndarray:
    ramp = np.linspace(0.0, 1.0, size, dtype=np.float32)
    return np.tile(ramp, (size, 1)) if horizontal else np.tile(ramp[:, None], (1, size))


def blobs(size: int, seed: int, count: int = 6) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    img = np.zeros((size, size), dtype=np.float32)
    for _ in range(count):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(size / 12, size / 4)
        amp = rng.uniform(0.3, 1.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    img -= img.min()
    peak = img.max()
    return (img / peak if peak > 0 else img).astype(np.float32)


def flat(size: int, value: float = 0.5) -> np.ndarray:
    return np.full((size, size), value, dtype=np.float32)


_TEXTURE_MAKERS = ("noise", "checker", "ramp", "blobs", "flat")


def texture(kind: str, size: int, seed: int = 0) -> np.ndarray:
    if kind == "noise":
        return smooth_noise(size, seed)
    if kind == "checker":
        return checkerboard(size, cell=4 + (seed % 13))
    if kind == "ramp":
        return gradient_ramp(size, horizontal=bool(seed % 2))
    if kind == "blobs":
        return blobs(size, seed)
    if kind == "flat":
        return flat(size, value=0.1 + 0.8 * ((seed % 9) / 8.0))
    raise ValueError(f"unknown texture kind {kind!r}")


def patch_dataset(count: int, size: int = 64, seed: int = 0,
                  kinds: tuple[str, ...] = _TEXTURE_MAKERS) -> np.ndarray:
    """(N, size, size) float32 stack mixing the texture families."""
    rng = np.random.default_rng(seed)
    out = np.empty((count, size, size), dtype=np.float32)
    for i in range(count):
        kind = kinds[int(rng.integers(len(kinds)))]
        out[i] = texture(kind, size, seed=int(rng.integers(1 << 31)))
    return out


def array_to_frame(x: np.ndarray, bit_depth: int = 8) -> Frame:
    """Normalized (H, W) array to an integer mono frame."""
    peak = (1 << bit_depth) - 1
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    plane = np.round(np.clip(x, 0, 1) * peak).astype(dtype)
    return Frame(planes=(plane,), bit_depth=bit_depth, colorspace="mono")


def static_clip(base: np.ndarray, n_frames: int, gop_size: int | None = None) -> VideoSequence:
    frames = [array_to_frame(base) for _ in range(n_frames)]
    return VideoSequence(frames=frames, fps=Fraction(30, 1),
                         gop_size=gop_size or n_frames)


def translating_clip(base: np.ndarray, n_frames: int, shift: tuple[int, int] = (1, 2),
                     gop_size: int | None = None) -> VideoSequence:
    """Wraparound translation of ``base`` by ``shift`` (dy, dx) per frame."""
    frames = []
    for t in range(n_frames):
        moved = np.roll(base, (t * shift[0], t * shift[1]), axis=(0, 1))
        frames.append(array_to_frame(moved))
    return VideoSequence(frames=frames, fps=Fraction(30, 1),
                         gop_size=gop_size or n_frames)


def translating_pairs(count: int, size: int = 64, seed: int = 0,
                      max_shift: int = 3) -> list[tuple[np.ndarray, np.ndarray]]:
    """(reference, shifted current) pairs for motion training."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        base = texture(
            _TEXTURE_MAKERS[int(rng.integers(len(_TEXTURE_MAKERS) - 1))],
            size,
            seed=int(rng.integers(1 << 31)),
        )
        dy = int(rng.integers(-max_shift, max_shift + 1))
        dx = int(rng.integers(-max_shift, max_shift + 1))
        cur = np.roll(base, (dy, dx), axis=(0, 1)).astype(np.float32)
        pairs.append((base, cur))
    return pairs


def degrade(x: np.ndarray, seed: int = 0, blur: float = 1.2,
            noise: float = 0.02) -> np.ndarray:
    """Blur plus seeded Gaussian noise; a stand-in for compression damage."""
    rng = np.random.default_rng(seed)
    y = gaussian_filter(x.astype(np.float32), sigma=blur, mode="nearest")
    y = y + rng.normal(scale=noise, size=x.shape).astype(np.float32)
    return np.clip(y, 0.0, 1.0).astype(np.float32)
