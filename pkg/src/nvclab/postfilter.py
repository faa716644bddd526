"""Decoder-side enhancement: single-frame and motion-compensated multi-frame.

The fusion network is a wide-activation residual trunk (channels expand
before the rectifier inside every block) with a global skip from the frame
being enhanced, so an untrained network is exactly the identity.  Multi-frame
enhancement warps the two nearest higher-quality frames onto the target with
a coarse-to-fine block-matching flow (pluggable for an external estimator)
and fuses all three.  Enhancement is luma-only; chroma passes through.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import (
    arrays_to_state_dict,
    load_archive,
    model_identity,
    save_archive,
    state_dict_to_arrays,
)
from .errors import DecodeError, FormatError, ScheduleError
from .inter import warp
from .media import Frame, VideoSequence
from .trainutil import check_finite, step_rng

FlowFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class WideActivationBlock(nn.Module):
    """Residual block that widens channels ahead of the rectifier."""

    def __init__(self, width: int, expansion: int = 4):
        super().__init__()
        expanded = width * expansion
        if expanded <= width:
            raise ValueError(
                f"wide activation requires expansion > 1 (width {width}, "
                f"expanded {expanded})"
            )
        self.expand = nn.Conv2d(width, expanded, 3, padding=1)
        self.project = nn.Conv2d(expanded, width, 3, padding=1)

    def forward(self, x):
        return x + self.project(F.relu(self.expand(x)))


class WARNModel(nn.Module):
    """Wide-activation residual fusion network, arity 1 (SVE) or 3 (MVE)."""

    def __init__(self, arity: int = 1, width: int = 32, blocks: int = 8,
                 expansion: int = 4):
        super().__init__()
        if arity not in (1, 3):
            raise ValueError(f"arity must be 1 or 3, got {arity}")
        self.arity = arity
        self.width = width
        self.blocks = blocks
        self.expansion = expansion
        self.head = nn.Conv2d(arity, width, 3, padding=1)
        self.trunk = nn.Sequential(*[WideActivationBlock(width, expansion)
                                     for _ in range(blocks)])
        self.tail = nn.Conv2d(width, 1, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        """(B, arity, H, W) stacked luma -> enhanced (B, 1, H, W).

        Channel 0 is the frame being enhanced and carries the global skip.
        """
        if inputs.dim() != 4 or inputs.shape[1] != self.arity:
            raise FormatError(
                f"expected (B, {self.arity}, H, W), got {tuple(inputs.shape)}"
            )
        target = inputs[:, :1]
        return target + self.tail(self.trunk(self.head(inputs)))

    def config_echo(self) -> dict:
        return {"kind": "warn", "arity": self.arity, "width": self.width,
                "blocks": self.blocks, "expansion": self.expansion}

    def save(self, path) -> int:
        arrays = state_dict_to_arrays(self.state_dict())
        save_archive(path, arrays, self.config_echo())
        return model_identity(arrays)

    @classmethod
    def load(cls, path) -> "WARNModel":
        arrays, config = load_archive(path)
        if config.get("kind") != "warn":
            raise DecodeError(f"{path}: not an enhancement checkpoint")
        model = cls(arity=config["arity"], width=config["width"],
                    blocks=config["blocks"], expansion=config["expansion"])
        model.load_state_dict(arrays_to_state_dict(arrays))
        return model


def new_warn(arity: int, seed: int = 0, **kw) -> WARNModel:
    torch.manual_seed(seed)
    return WARNModel(arity=arity, **kw)


# ---------------------------------------------------------------------------
# Default flow estimator: coarse-to-fine block matching
# ---------------------------------------------------------------------------

def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return x[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _warp_np(src: np.ndarray, flow: np.ndarray) -> np.ndarray:
    out = warp(
        torch.from_numpy(src.astype(np.float32))[None, None],
        torch.from_numpy(flow.astype(np.float32))[None],
    )
    return out[0, 0].numpy()


def _shift_clamped(x: np.ndarray, dy: int, dx: int, pad: int) -> np.ndarray:
    padded = np.pad(x, pad, mode="edge")
    h, w = x.shape
    return padded[pad + dy : pad + dy + h, pad + dx : pad + dx + w]


def _refine_level(target: np.ndarray, source: np.ndarray, flow: np.ndarray,
                  block: int, search: int) -> np.ndarray:
    """One residual block-matching pass on top of the current flow."""
    h, w = target.shape
    warped = _warp_np(source, flow)
    by = -(-h // block)
    bx = -(-w // block)
    pad_h, pad_w = by * block - h, bx * block - w
    t = np.pad(target, ((0, pad_h), (0, pad_w)), mode="edge")
    wv = np.pad(warped, ((0, pad_h), (0, pad_w)), mode="edge")
    span = 2 * search + 1
    ssd = np.empty((span, span, by, bx), dtype=np.float64)
    for iy, dy in enumerate(range(-search, search + 1)):
        for ix, dx in enumerate(range(-search, search + 1)):
            diff = t - _shift_clamped(wv, dy, dx, search)
            ssd[iy, ix] = (
                (diff * diff).reshape(by, block, bx, block).sum(axis=(1, 3))
            )
    flat = ssd.reshape(span * span, by, bx)
    best = flat.argmin(axis=0)
    biy, bix = np.unravel_index(best, (span, span))
    res = np.zeros((2, by, bx), dtype=np.float64)
    res[0] = bix - search
    res[1] = biy - search
    # parabolic sub-pixel refinement where the minimum is interior and nonzero
    for axis, bidx in ((0, bix), (1, biy)):
        interior = (bidx > 0) & (bidx < span - 1)
        ys, xs = np.nonzero(interior)
        for yb, xb in zip(ys, xs):
            iy, ix = biy[yb, xb], bix[yb, xb]
            s0 = ssd[iy, ix, yb, xb]
            if s0 < 1e-12 * block * block:
                continue
            if axis == 0:
                sm, sp = ssd[iy, ix - 1, yb, xb], ssd[iy, ix + 1, yb, xb]
            else:
                sm, sp = ssd[iy - 1, ix, yb, xb], ssd[iy + 1, ix, yb, xb]
            denom = sm - 2 * s0 + sp
            if denom > 1e-12:
                res[axis, yb, xb] += float(np.clip(0.5 * (sm - sp) / denom, -0.5, 0.5))
    dense = res.repeat(block, axis=1).repeat(block, axis=2)[:, :h, :w]
    return flow + dense


def estimate_flow(target: np.ndarray | Frame, source: np.ndarray | Frame,
                  block: int = 8, search: int = 4) -> np.ndarray:
    """Dense (2, H, W) displacement field such that warp(source, flow) ~ target.

    Channel 0 is dx, channel 1 dy, in pixels.  Coarse-to-fine residual block
    matching with parabolic sub-pixel refinement; replace with any callable
    of the same signature to plug in an external estimator.
    """
    t = _luma_array(target)
    s = _luma_array(source)
    if t.shape != s.shape:
        raise FormatError(f"frame dims differ: {t.shape} vs {s.shape}")
    levels = [(t, s)]
    while min(levels[-1][0].shape) >= 4 * block:
        levels.append((_downsample2(levels[-1][0]), _downsample2(levels[-1][1])))
    flow = np.zeros((2,) + levels[-1][0].shape, dtype=np.float64)
    for lt, ls in reversed(levels):
        if flow.shape[1:] != lt.shape:
            flow = np.stack([
                np.kron(flow[0], np.ones((2, 2))) * 2.0,
                np.kron(flow[1], np.ones((2, 2))) * 2.0,
            ])[:, : lt.shape[0], : lt.shape[1]]
        flow = _refine_level(lt, ls, flow, block, search)
    return flow.astype(np.float32)


def _luma_array(x: np.ndarray | Frame) -> np.ndarray:
    if isinstance(x, Frame):
        return x.planes[0].astype(np.float64) / x.max_value
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Enhancement entry points
# ---------------------------------------------------------------------------

def _frame_luma_tensor(f: Frame) -> torch.Tensor:
    return torch.from_numpy((f.planes[0].astype(np.float32) / f.max_value))


def _replace_luma(f: Frame, luma: torch.Tensor) -> Frame:
    peak = f.max_value
    dtype = f.planes[0].dtype
    new = np.round(np.clip(luma.numpy(), 0, 1) * peak).astype(dtype)
    return Frame(planes=(new,) + tuple(p.copy() for p in f.planes[1:]),
                 bit_depth=f.bit_depth, colorspace=f.colorspace)


@torch.no_grad()
def sve_enhance(x: Frame, model: WARNModel) -> Frame:
    """Single-frame enhancement of ``x``."""
    if model.arity != 1:
        raise FormatError(f"single-frame enhancement needs arity 1, got {model.arity}")
    luma = _frame_luma_tensor(x)
    out = model(luma[None, None])[0, 0]
    return _replace_luma(x, out)


@torch.no_grad()
def mve_enhance(lf: Frame, hf_prev: Frame, hf_next: Frame,
                flow_fn: FlowFn | None, model: WARNModel) -> Frame:
    """Enhance ``lf`` from bidirectionally warped higher-quality neighbors."""
    if model.arity != 3:
        raise FormatError(f"multi-frame enhancement needs arity 3, got {model.arity}")
    for name, f in (("hf_prev", hf_prev), ("hf_next", hf_next)):
        if not lf.same_geometry(f):
            raise FormatError(f"{name} geometry differs from target frame")
    flow_fn = flow_fn or estimate_flow
    lf_t = _frame_luma_tensor(lf)
    aligned = [lf_t]
    for hf in (hf_prev, hf_next):
        flow = np.asarray(flow_fn(lf, hf), dtype=np.float32)
        if flow.shape != (2, lf.height, lf.width):
            raise FormatError(f"flow estimator returned shape {flow.shape}")
        warped = warp(_frame_luma_tensor(hf)[None, None],
                      torch.from_numpy(flow)[None])[0, 0]
        aligned.append(warped)
    out = model(torch.stack(aligned)[None])[0, 0]
    return _replace_luma(lf, out)


# ---------------------------------------------------------------------------
# Hierarchical GoP scheduling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GopSchedule:
    """Per-frame enhancement roles plus the HF neighbors of every LF."""

    roles: tuple[str, ...]                       # "HF" or "LF" per frame
    lf_neighbors: dict[int, tuple[int, int]]     # lf index -> (prev HF, next HF)

    @property
    def hf_indices(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.roles) if r == "HF")


def build_schedule(gop_size: int, qps: list[int], base_qp: int) -> GopSchedule:
    """Split a GoP into high-quality anchors and the frames they enhance.

    High-quality frames are exactly those coded below the base QP; every
    low-quality frame must have an anchor on both sides.
    """
    if len(qps) != gop_size:
        raise ScheduleError(f"got {len(qps)} QPs for a {gop_size}-frame GoP")
    roles = tuple("HF" if qp < base_qp else "LF" for qp in qps)
    hfs = [i for i, r in enumerate(roles) if r == "HF"]
    if not hfs:
        raise ScheduleError("no frame is coded below the base QP")
    neighbors: dict[int, tuple[int, int]] = {}
    for i, role in enumerate(roles):
        if role == "LF":
            prev = [h for h in hfs if h < i]
            nxt = [h for h in hfs if h > i]
            if not prev or not nxt:
                raise ScheduleError(
                    f"frame {i} lacks a higher-quality neighbor on both sides"
                )
            neighbors[i] = (prev[-1], nxt[0])
    return GopSchedule(roles=roles, lf_neighbors=neighbors)


@torch.no_grad()
def enhance_sequence(
    seq: VideoSequence,
    qps: list[int],
    base_qp: int,
    sve_model: WARNModel,
    mve_model: WARNModel,
    flow_fn: FlowFn | None = None,
) -> VideoSequence:
    """Enhance every frame exactly once: anchors single-frame, others fused
    from their (already enhanced) anchors."""
    schedule = build_schedule(len(seq), qps, base_qp)
    out: list[Frame | None] = [None] * len(seq)
    for i in schedule.hf_indices:
        out[i] = sve_enhance(seq[i], sve_model)
    for i, (p, n) in schedule.lf_neighbors.items():
        out[i] = mve_enhance(seq[i], out[p], out[n], flow_fn, mve_model)
    return VideoSequence(frames=list(out), fps=seq.fps, gop_size=seq.gop_size)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_warn(
    model: WARNModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    steps: int,
    seed: int,
    batch_size: int = 8,
    lr: float = 1e-4,
    start_step: int = 0,
    optimizer_state: dict | None = None,
) -> tuple[list[dict], dict]:
    """L2 training on (N, arity, H, W) stacks against (N, H, W) clean targets."""
    x = torch.from_numpy(np.asarray(inputs, dtype=np.float32))
    y = torch.from_numpy(np.asarray(targets, dtype=np.float32))
    if x.dim() == 3:
        x = x[:, None]
    if y.dim() == 3:
        y = y[:, None]
    if x.shape[1] != model.arity:
        raise FormatError(f"inputs have {x.shape[1]} channels, model arity {model.arity}")
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("need equal-length, non-empty input/target stacks")
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    history = []
    for step in range(start_step, steps):
        rng = step_rng(seed, step)
        idx = torch.from_numpy(
            rng.integers(0, len(x), size=min(batch_size, len(x))).astype(np.int64)
        )
        loss = F.mse_loss(model(x[idx]), y[idx])
        check_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "loss": float(loss.detach())})
    return history, {"step": max(steps, start_step), "optimizer": opt.state_dict()}
