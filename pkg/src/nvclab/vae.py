"""Generic compression autoencoder: main and hyper transform pairs.

One engine instance provides the four-stage downsampling analysis transform,
its mirrored synthesis transform, and the two-stage hyper pair used for side
information.  The same engine class backs intra coding, motion coding (with a
different decoder head), and residual coding.  Bottlenecks carry a non-local
attention block whose multiplicative branch starts at exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

DOWN_FACTOR = 16   # four stride-2 stages
HYPER_FACTOR = 4   # two more stride-2 stages


@dataclass(frozen=True)
class EngineConfig:
    in_channels: int = 1
    stage_channels: tuple[int, int, int, int] = (32, 32, 32, 32)
    latent_channels: int = 32
    hyper_channels: int = 32
    hyper_feature_channels: int = 16
    residual_blocks: int = 3
    attention: bool = True

    def __post_init__(self):
        if min(self.stage_channels) < 1 or self.latent_channels < 1:
            raise ValueError("channel widths must be >= 1")
        if len(self.stage_channels) != 4:
            raise ValueError("the analysis transform has exactly four stages")

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "stage_channels": list(self.stage_channels),
            "latent_channels": self.latent_channels,
            "hyper_channels": self.hyper_channels,
            "hyper_feature_channels": self.hyper_feature_channels,
            "residual_blocks": self.residual_blocks,
            "attention": self.attention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        d = dict(d)
        d["stage_channels"] = tuple(d["stage_channels"])
        return cls(**d)


@dataclass
class LatentTensor:
    """Bottleneck feature grid; ``seed`` records the quantizer dither."""

    values: torch.Tensor  # (C, h, w)
    quantized: bool = False
    seed: int | None = None
    scan_order: str = "channel-major-raster"


@dataclass
class HyperLatent:
    values: torch.Tensor  # (C_h, h', w')
    quantized: bool = False
    seed: int | None = None


class ResidualBlock(nn.Module):
    """conv3x3 -> ReLU -> conv3x3 with identity skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class NonLocalAttention(nn.Module):
    """Bottleneck attention in residual form.

    A non-local block summarizes global context; a sigmoid branch turns it
    into a per-element mask in (0, 1) and a zero-initialized value branch
    scales the masked contribution, so a fresh block is exactly the identity.
    """

    def __init__(self, channels: int):
        super().__init__()
        inner = max(channels // 2, 1)
        self.theta = nn.Conv2d(channels, inner, 1)
        self.phi = nn.Conv2d(channels, inner, 1)
        self.g = nn.Conv2d(channels, inner, 1)
        self.out_proj = nn.Conv2d(inner, channels, 1)
        self.mask_conv = nn.Conv2d(channels, channels, 1)
        self.value_conv = nn.Conv2d(channels, channels, 1)
        nn.init.zeros_(self.mask_conv.weight)
        nn.init.zeros_(self.mask_conv.bias)
        nn.init.zeros_(self.value_conv.weight)
        nn.init.zeros_(self.value_conv.bias)

    def _context(self, x):
        b, c, h, w = x.shape
        n = h * w
        inner = self.theta.out_channels
        q = self.theta(x).reshape(b, inner, n)
        k = self.phi(x).reshape(b, inner, n)
        v = self.g(x).reshape(b, inner, n)
        attn = torch.softmax(q.transpose(1, 2) @ k / float(np.sqrt(inner)), dim=-1)
        y = (v @ attn.transpose(1, 2)).reshape(b, inner, h, w)
        return x + self.out_proj(y)

    def mask(self, x):
        return torch.sigmoid(self.mask_conv(self._context(x)))

    def forward(self, x):
        ctx = self._context(x)
        mask = torch.sigmoid(self.mask_conv(ctx))
        return x + self.value_conv(ctx) * mask


class MainEncoder(nn.Module):
    """Four stride-2 stages, each followed by residual blocks."""

    def __init__(self, cfg: EngineConfig):
        super().__init__()
        layers: list[nn.Module] = []
        prev = cfg.in_channels
        for width in cfg.stage_channels:
            layers.append(nn.Conv2d(prev, width, 5, stride=2, padding=2))
            layers.append(nn.ReLU())
            layers.extend(ResidualBlock(width) for _ in range(cfg.residual_blocks))
            prev = width
        self.stages = nn.Sequential(*layers)
        self.attention = NonLocalAttention(prev) if cfg.attention else nn.Identity()
        self.head = nn.Conv2d(prev, cfg.latent_channels, 3, padding=1)

    def forward(self, x):
        if x.shape[-1] % DOWN_FACTOR or x.shape[-2] % DOWN_FACTOR:
            raise RuntimeError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by {DOWN_FACTOR}; "
                "pad upstream"
            )
        return self.head(self.attention(self.stages(x)))


class MainDecoder(nn.Module):
    """Mirror of :class:`MainEncoder`: residual blocks then stride-2 upsampling."""

    def __init__(self, cfg: EngineConfig, out_channels: int | None = None):
        super().__init__()
        widths = tuple(reversed(cfg.stage_channels))
        self.stem = nn.Conv2d(cfg.latent_channels, widths[0], 3, padding=1)
        self.attention = NonLocalAttention(widths[0]) if cfg.attention else nn.Identity()
        out_channels = cfg.in_channels if out_channels is None else out_channels
        layers: list[nn.Module] = []
        for i, width in enumerate(widths):
            layers.extend(ResidualBlock(width) for _ in range(cfg.residual_blocks))
            last = i == len(widths) - 1
            nxt = out_channels if last else widths[i + 1]
            layers.append(
                nn.ConvTranspose2d(width, nxt, 5, stride=2, padding=2, output_padding=1)
            )
            if not last:
                layers.append(nn.ReLU())
        self.stages = nn.Sequential(*layers)

    def forward(self, f):
        return self.stages(self.attention(self.stem(f)))


class HyperEncoder(nn.Module):
    def __init__(self, cfg: EngineConfig):
        super().__init__()
        self.conv1 = nn.Conv2d(cfg.latent_channels, cfg.hyper_channels, 5, stride=2, padding=2)
        self.conv2 = nn.Conv2d(cfg.hyper_channels, cfg.hyper_channels, 5, stride=2, padding=2)
        self.attention = NonLocalAttention(cfg.hyper_channels) if cfg.attention else nn.Identity()

    def forward(self, f):
        return self.attention(self.conv2(F.relu(self.conv1(f))))


class HyperDecoder(nn.Module):
    """Two upsampling stages producing prior features aligned with the latent."""

    def __init__(self, cfg: EngineConfig):
        super().__init__()
        self.attention = NonLocalAttention(cfg.hyper_channels) if cfg.attention else nn.Identity()
        self.deconv1 = nn.ConvTranspose2d(
            cfg.hyper_channels, cfg.hyper_channels, 5, stride=2, padding=2, output_padding=1
        )
        self.deconv2 = nn.ConvTranspose2d(
            cfg.hyper_channels, cfg.hyper_feature_channels, 5, stride=2, padding=2,
            output_padding=1,
        )

    def forward(self, z):
        return self.deconv2(F.relu(self.deconv1(self.attention(z))))


class CompressionEngine(nn.Module):
    """Main + hyper transform pairs behind one module."""

    def __init__(self, cfg: EngineConfig, decoder: nn.Module | None = None):
        super().__init__()
        self.cfg = cfg
        self.main_encoder = MainEncoder(cfg)
        self.main_decoder = MainDecoder(cfg) if decoder is None else decoder
        self.hyper_encoder = HyperEncoder(cfg)
        self.hyper_decoder = HyperDecoder(cfg)

    def main_encode(self, x):
        return self.main_encoder(x)

    def main_decode(self, f):
        return self.main_decoder(f)

    def hyper_encode(self, f):
        return self.hyper_encoder(f)

    def hyper_decode(self, z):
        return self.hyper_decoder(z)


# ---------------------------------------------------------------------------
# Universal quantization
# ---------------------------------------------------------------------------

def dither_from_seed(seed: int) -> float:
    """Reproducible scalar dither in [-1/2, 1/2) for a 32-bit seed."""
    gen = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFF))
    return float(np.float32(gen.uniform(-0.5, 0.5)))


def universal_quantize(x: torch.Tensor, seed: int, mode: str = "inference") -> torch.Tensor:
    """Shared-dither rounding: round(x + u) - u with u derived from ``seed``.

    The same seed reproduces the same dither on the decoder side, so encoder
    and decoder see bit-identical quantized values.  ``mode="train"`` keeps
    the value path quantized but lets gradients pass straight through.
    """
    if mode not in ("train", "inference"):
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    u = dither_from_seed(seed)
    q = torch.round(x + u) - u
    if mode == "train":
        return x + (q - x).detach()
    return q.detach() if x.requires_grad else q


def quantize_to_symbols(x: torch.Tensor, seed: int) -> torch.Tensor:
    """Integer symbols round(x + u); the coded representation of a latent."""
    return torch.round(x + dither_from_seed(seed)).to(torch.int64)


def symbols_to_values(symbols: torch.Tensor, seed: int) -> torch.Tensor:
    """Inverse of :func:`quantize_to_symbols` up to the shared dither."""
    return symbols.to(torch.float32) - dither_from_seed(seed)


# ---------------------------------------------------------------------------
# Padding helpers
# ---------------------------------------------------------------------------

def pad_to_multiple(x: torch.Tensor, multiple: int = DOWN_FACTOR) -> tuple[torch.Tensor, tuple[int, int]]:
    """Replicate-pad (B, C, H, W) on the right/bottom; returns original (H, W)."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    return x, (h, w)


def crop_to(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    h, w = size
    return x[..., :h, :w]
