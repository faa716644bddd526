"""Distortion metrics and Bjontegaard rate-delta comparison.

All metrics accept :class:`~nvclab.media.Frame` pairs.  For 4:2:0 content the
default is luma-only measurement (``channels="luma"``); pass
``channels="all"`` to pool the MSE over every sample including chroma.  RGB
and mono frames always use all their planes.  The channel selection actually
used is reported in the per-frame records emitted by the CLI.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, FormatError
from .media import Frame

LOSSLESS = math.inf

# standard 5-scale MS-SSIM weights
_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class RDPoint:
    """One operating point of a codec: rate in bits/pixel plus a quality score."""

    rate: float
    distortion: float
    metric: str = "psnr"

    def __post_init__(self):
        if not self.rate > 0:
            raise FormatError(f"rate must be positive, got {self.rate}")
        if self.metric == "ms_ssim" and not (0.0 <= self.distortion <= 1.0):
            raise FormatError(f"MS-SSIM must lie in [0, 1], got {self.distortion}")


def _gather_samples(a: Frame, b: Frame, channels: str) -> tuple[np.ndarray, np.ndarray]:
    if not a.same_geometry(b):
        raise FormatError(
            f"frame geometry mismatch: {a.width}x{a.height}/{a.colorspace} vs "
            f"{b.width}x{b.height}/{b.colorspace}"
        )
    if channels not in ("luma", "all"):
        raise ValueError(f"channels must be 'luma' or 'all', got {channels!r}")
    if channels == "luma" and a.colorspace == "ycbcr420":
        pa, pb = [a.planes[0]], [b.planes[0]]
    else:
        pa, pb = list(a.planes), list(b.planes)
    xs = np.concatenate([p.astype(np.float64).ravel() for p in pa])
    ys = np.concatenate([p.astype(np.float64).ravel() for p in pb])
    return xs, ys


def psnr(a: Frame, b: Frame, channels: str = "luma") -> float:
    """Peak signal-to-noise ratio in dB; ``LOSSLESS`` (inf) when MSE is zero."""
    xs, ys = _gather_samples(a, b, channels)
    mse = float(np.mean((xs - ys) ** 2))
    if mse == 0.0:
        return LOSSLESS
    peak = float(a.max_value)
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter2_valid(img: np.ndarray, kern1d: np.ndarray) -> np.ndarray:
    # separable 'valid' convolution with a symmetric 1-D kernel
    from scipy.ndimage import correlate1d

    out = correlate1d(img, kern1d, axis=0, mode="constant")
    out = correlate1d(out, kern1d, axis=1, mode="constant")
    half = (len(kern1d) - 1) // 2
    return out[half:-half, half:-half]


def _ssim_components(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window luminance term and contrast*structure term (clamped at 0)."""
    k = _gaussian_kernel()
    c1 = (_SSIM_K1) ** 2
    c2 = (_SSIM_K2) ** 2
    mu_x = _filter2_valid(x, k)
    mu_y = _filter2_valid(y, k)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = _filter2_valid(x * x, k) - mu_xx
    sigma_yy = _filter2_valid(y * y, k) - mu_yy
    sigma_xy = _filter2_valid(x * y, k) - mu_xy
    lum = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1)
    cs = (2.0 * sigma_xy + c2) / (sigma_xx + sigma_yy + c2)
    # clamp keeps the multiscale product inside [0, 1] on adversarial pairs
    return np.maximum(lum, 0.0), np.maximum(cs, 0.0)


def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return x[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(
    a: Frame,
    b: Frame,
    channels: str = "luma",
    return_details: bool = False,
):
    """Multiscale SSIM in [0, 1] with the standard 5-scale weighting.

    Frames too small for five dyadic scales fall back to fewer scales with
    renormalized weights; the number of scales used is available via
    ``return_details=True``.
    """
    if not a.same_geometry(b):
        raise FormatError("frame geometry mismatch")
    if channels == "luma" or a.colorspace != "rgb":
        x = a.planes[0].astype(np.float64) / a.max_value
        y = b.planes[0].astype(np.float64) / b.max_value
        score, scales = _ms_ssim_plane(x, y)
    else:
        vals = []
        for pa, pb in zip(a.planes, b.planes):
            s, scales = _ms_ssim_plane(
                pa.astype(np.float64) / a.max_value, pb.astype(np.float64) / b.max_value
            )
            vals.append(s)
        score = float(np.mean(vals))
    score = float(min(max(score, 0.0), 1.0))
    if return_details:
        return score, {"scales": scales, "channels": channels}
    return score


def _ms_ssim_plane(x: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    max_scales = len(_MSSSIM_WEIGHTS)
    usable = 0
    h, w = x.shape
    for s in range(max_scales):
        if min(h, w) // (2 ** s) >= _SSIM_WINDOW:
            usable = s + 1
    if usable == 0:
        raise FormatError(f"frame {w}x{h} smaller than one SSIM window")
    weights = np.asarray(_MSSSIM_WEIGHTS[:usable])
    weights = weights / weights.sum()
    score = 1.0
    for s in range(usable):
        lum, cs = _ssim_components(x, y)
        if s < usable - 1:
            score *= float(np.mean(cs)) ** weights[s]
            x = _downsample2(x)
            y = _downsample2(y)
        else:
            score *= float(np.mean(lum * cs)) ** weights[s]
    return score, usable


def bd_rate(anchor: list[RDPoint], test: list[RDPoint]) -> float:
    """Bjontegaard delta-rate of ``test`` against ``anchor`` in percent.

    Both curves are fit with a monotone piecewise-cubic interpolant in
    (distortion, log-rate) and the log-rate gap is averaged over the
    overlapping distortion range.  Negative values mean the test codec needs
    fewer bits for the same quality.
    """
    a_d, a_r = _curve_arrays(anchor, "anchor")
    t_d, t_r = _curve_arrays(test, "test")
    lo = max(a_d.min(), t_d.min())
    hi = min(a_d.max(), t_d.max())
    if not lo < hi:
        raise DomainError(
            f"distortion ranges do not overlap: anchor [{a_d.min()}, {a_d.max()}], "
            f"test [{t_d.min()}, {t_d.max()}]"
        )
    fa = PchipInterpolator(a_d, np.log(a_r))
    ft = PchipInterpolator(t_d, np.log(t_r))
    samples, step = np.linspace(lo, hi, num=1024, retstep=True)
    gap = ft(samples) - fa(samples)
    avg = np.trapezoid(gap, dx=step) / (hi - lo)
    return float((math.exp(avg) - 1.0) * 100.0)


def _curve_arrays(points: list[RDPoint], name: str) -> tuple[np.ndarray, np.ndarray]:
    if len(points) < 4:
        raise DomainError(f"{name} curve needs at least 4 points, got {len(points)}")
    metrics = {p.metric for p in points}
    if len(metrics) != 1:
        raise DomainError(f"{name} curve mixes metrics: {sorted(metrics)}")
    pts = sorted(points, key=lambda p: p.distortion)
    d = np.asarray([p.distortion for p in pts], dtype=np.float64)
    r = np.asarray([p.rate for p in pts], dtype=np.float64)
    if np.any(np.diff(d) <= 0):
        raise DomainError(f"{name} curve distortions are not strictly monotone")
    return d, r


# ---------------------------------------------------------------------------
# Per-frame structured records (line-delimited)
# ---------------------------------------------------------------------------

def frame_record(index: int, bits: int, psnr_db: float, ms_ssim_score: float,
                 channels: str = "luma", **extra) -> str:
    """One line-delimited record for a coded frame."""
    rec = {
        "frame": index,
        "bits": bits,
        "psnr": "lossless" if math.isinf(psnr_db) else round(psnr_db, 4),
        "ms_ssim": round(ms_ssim_score, 6),
        "channels": channels,
    }
    rec.update(extra)
    return json.dumps(rec, sort_keys=True)


def parse_records(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]
