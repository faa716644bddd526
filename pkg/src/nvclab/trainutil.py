"""Shared training machinery: seeded step streams, health checks, losses."""

from __future__ import annotations

import contextlib

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import TrainingDiverged


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Independent generator per (run seed, step); makes resume exact."""
    return np.random.Generator(np.random.PCG64(((seed & 0xFFFFFFFF) << 20) ^ step))


def step_noise(shape, seed: int, step: int, tag: int = 0) -> torch.Tensor:
    """Uniform(-1/2, 1/2) noise tensor reproducible from (seed, step, tag)."""
    rng = step_rng(seed ^ (tag * 0x9E3779B9), step)
    return torch.from_numpy(
        rng.uniform(-0.5, 0.5, size=tuple(shape)).astype(np.float32)
    )


def check_finite(loss: torch.Tensor, step: int, parts: dict | None = None) -> None:
    if not bool(torch.isfinite(loss.detach())):
        detail = ""
        if parts:
            vals = {
                k: float(v.detach()) if torch.is_tensor(v) else float(v)
                for k, v in parts.items()
            }
            detail = "; " + ", ".join(f"{k}={v:.6g}" for k, v in vals.items())
        raise TrainingDiverged(f"non-finite loss at step {step}{detail}")


class NumericHealth(contextlib.AbstractContextManager):
    """Forward hooks asserting every intermediate tensor stays finite."""

    def __init__(self, *modules: nn.Module):
        self._modules = modules
        self._handles = []

    @staticmethod
    def _hook(module, inputs, output):
        tensors = output if isinstance(output, (tuple, list)) else (output,)
        for t in tensors:
            if torch.is_tensor(t) and not bool(torch.isfinite(t).all()):
                raise TrainingDiverged(
                    f"non-finite activation after {module.__class__.__name__}"
                )

    def __enter__(self):
        for root in self._modules:
            for m in root.modules():
                self._handles.append(m.register_forward_hook(self._hook))
        return self

    def __exit__(self, *exc):
        for h in self._handles:
            h.remove()
        self._handles.clear()
        return False


# ---------------------------------------------------------------------------
# Differentiable multiscale SSIM (training-loss alternative to MSE)
# ---------------------------------------------------------------------------

_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _gauss_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float32) - (size - 1) / 2
    g = torch.exp(-(x * x) / (2 * sigma * sigma))
    g = g / g.sum()
    return g[:, None] @ g[None, :]


def _ssim_terms(a: torch.Tensor, b: torch.Tensor, window: torch.Tensor):
    c = a.shape[1]
    w = window.expand(c, 1, -1, -1)
    mu_a = F.conv2d(a, w, groups=c)
    mu_b = F.conv2d(b, w, groups=c)
    saa = F.conv2d(a * a, w, groups=c) - mu_a * mu_a
    sbb = F.conv2d(b * b, w, groups=c) - mu_b * mu_b
    sab = F.conv2d(a * b, w, groups=c) - mu_a * mu_b
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * sab + c2) / (saa + sbb + c2)
    return lum.clamp(min=0).mean(), cs.clamp(min=0).mean()


def ms_ssim_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Differentiable MS-SSIM on (B, C, H, W) in [0, 1]; scales shrink to fit."""
    window = _gauss_window().to(a)
    usable = 0
    side = min(a.shape[-2:])
    for s in range(len(_MSSSIM_WEIGHTS)):
        if side // (2 ** s) >= 11:
            usable = s + 1
    if usable == 0:
        raise ValueError(f"inputs {tuple(a.shape[-2:])} too small for SSIM")
    weights = torch.tensor(_MSSSIM_WEIGHTS[:usable])
    weights = weights / weights.sum()
    score = a.new_tensor(1.0)
    for s in range(usable):
        lum, cs = _ssim_terms(a, b, window)
        if s < usable - 1:
            score = score * cs ** weights[s]
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
        else:
            score = score * (lum * cs) ** weights[s]
    return score


def distortion_loss(recon: torch.Tensor, target: torch.Tensor,
                    kind: str = "mse") -> torch.Tensor:
    if kind == "mse":
        return F.mse_loss(recon, target)
    if kind == "ms_ssim":
        return 1.0 - ms_ssim_torch(recon.clamp(0, 1), target)
    raise ValueError(f"unknown distortion kind {kind!r}")


def halve_every(initial_lr: float, epoch: int, period: int = 20) -> float:
    return initial_lr * (0.5 ** (epoch // period))
