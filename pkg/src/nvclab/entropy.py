"""Probability modeling for quantized latents and the coding loops that use it.

Each latent kind (intra, motion, residual) owns a :class:`LatentEntropyModel`:
a causally masked 3-D convolution supplies spatial context in channel-major
raster order, a stack of 1x1x1 convolutions fuses it with hyper features and
(for motion) recurrent temporal features into per-element Gaussian parameters.
Hyper latents are coded under a learned per-channel Gaussian.

Training and rate estimation use vectorized passes; actual bit production
runs a serial per-element loop shared verbatim by encoder and decoder so the
reconstructed context is bit-identical on both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .rangecoder import (
    P_MIN,
    SIGMA_MIN,
    RangeDecoder,
    RangeEncoder,
    gaussian_cdf_table,
)

CONTEXT_KERNEL = 5


@dataclass
class GaussianParams:
    """Per-element mean and (floored) standard deviation grids."""

    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma must share a shape")


@dataclass
class TemporalState:
    """Recurrent prior state carried across P-frames."""

    h: torch.Tensor  # (T, h, w), elementwise in (-1, 1)
    c: torch.Tensor  # (T, h, w)

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "TemporalState":
        return cls(
            h=torch.zeros(channels, height, width),
            c=torch.zeros(channels, height, width),
        )


def raster_mask(kernel: int = CONTEXT_KERNEL) -> torch.Tensor:
    """Strictly-causal kernel mask for channel-major (c, y, x) raster order."""
    m = torch.zeros(kernel, kernel, kernel)
    half = kernel // 2
    for dc in range(kernel):
        for dy in range(kernel):
            for dx in range(kernel):
                if (dc, dy, dx) < (half, half, half):
                    m[dc, dy, dx] = 1.0
    return m


class SpatialContext(nn.Module):
    """Masked 5x5x5 convolution over the (channel, y, x) latent volume.

    One parameter set serves every channel: the latent is treated as a single
    3-D volume, so context crosses channel boundaries along the scan order.
    """

    def __init__(self, out_channels: int = 12, kernel: int = CONTEXT_KERNEL):
        super().__init__()
        self.conv = nn.Conv3d(1, out_channels, kernel, padding=kernel // 2)
        self.register_buffer("mask", raster_mask(kernel)[None, None])
        self.out_channels = out_channels
        self.kernel = kernel

    def masked_weight(self) -> torch.Tensor:
        return self.conv.weight * self.mask

    def forward(self, volume: torch.Tensor) -> torch.Tensor:
        """(C, h, w) or (B, C, h, w) latent -> matching (..., K, C, h, w) context."""
        w = self.masked_weight()
        batched = volume.dim() == 4
        vol = volume if batched else volume[None]
        out = F.conv3d(vol[:, None], w, self.conv.bias, padding=self.kernel // 2)
        return out if batched else out[0]

    def at(self, padded: torch.Tensor, c: int, y: int, x: int,
           weight: torch.Tensor | None = None) -> torch.Tensor:
        """Context vector at one scan position from the padded volume."""
        k = self.kernel
        if weight is None:
            weight = self.masked_weight()
        patch = padded[c : c + k, y : y + k, x : x + k]
        return (weight[:, 0] * patch).sum(dim=(1, 2, 3)) + self.conv.bias


class PriorAggregator(nn.Module):
    """Fuse spatial/hyper/temporal features into Gaussian parameters.

    The fusion is a stack of 1x1x1 convolutions applied per latent voxel;
    hyper and temporal features are shared across the latent channel axis.
    """

    def __init__(
        self,
        spatial_channels: int,
        hyper_channels: int,
        temporal_channels: int = 0,
        hidden: int = 32,
    ):
        super().__init__()
        self.spatial_channels = spatial_channels
        self.hyper_channels = hyper_channels
        self.temporal_channels = temporal_channels
        in_ch = spatial_channels + hyper_channels + temporal_channels
        self.fuse = nn.Sequential(
            nn.Conv3d(in_ch, hidden, 1),
            nn.ReLU(),
            nn.Conv3d(hidden, hidden, 1),
            nn.ReLU(),
            nn.Conv3d(hidden, 2, 1),
        )

    def _stack(self, spatial, hyper, temporal):
        b, _, c, h, w = spatial.shape
        feats = [spatial, hyper[:, :, None].expand(b, -1, c, h, w)]
        if self.temporal_channels:
            if temporal is None:
                temporal = spatial.new_zeros(b, self.temporal_channels, h, w)
            feats.append(temporal[:, :, None].expand(b, -1, c, h, w))
        elif temporal is not None:
            raise ValueError("this aggregator was built without temporal priors")
        return torch.cat(feats, dim=1)

    def forward(
        self,
        spatial: torch.Tensor,
        hyper: torch.Tensor,
        temporal: torch.Tensor | None = None,
    ) -> GaussianParams:
        """(K, C, h, w) + (F, h, w) [+ (T, h, w)] -> params over (C, h, w).

        A leading batch axis on every input is also accepted.
        """
        if spatial.shape[-2:] != hyper.shape[-2:]:
            raise ValueError(
                f"hyper features {tuple(hyper.shape[-2:])} not aligned with "
                f"latent {tuple(spatial.shape[-2:])}"
            )
        batched = spatial.dim() == 5
        if not batched:
            spatial = spatial[None]
            hyper = hyper[None]
            temporal = temporal[None] if temporal is not None else None
        out = self.fuse(self._stack(spatial, hyper, temporal))
        mu = out[:, 0]
        sigma = SIGMA_MIN + F.softplus(out[:, 1])
        if not batched:
            mu, sigma = mu[0], sigma[0]
        return GaussianParams(mu=mu, sigma=sigma)

    def at(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Single-voxel fusion; ``features`` is the concatenated feature vector."""
        v = features
        layers = [m for m in self.fuse if isinstance(m, nn.Conv3d)]
        for i, layer in enumerate(layers):
            w = layer.weight[:, :, 0, 0, 0]
            v = w @ v + layer.bias
            if i < len(layers) - 1:
                v = F.relu(v)
        return v[0], SIGMA_MIN + F.softplus(v[1])


class ConvLSTMCell(nn.Module):
    """Standard convolutional LSTM cell over latent-resolution grids."""

    def __init__(self, in_channels: int, hidden_channels: int, kernel: int = 3):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(
            in_channels + hidden_channels, 4 * hidden_channels, kernel,
            padding=kernel // 2,
        )

    def step(self, x: torch.Tensor, h: torch.Tensor, c: torch.Tensor):
        """Batched cell update on (B, C, gh, gw) grids."""
        z = self.gates(torch.cat([x, h], dim=1))
        i, f, o, g = torch.chunk(z, 4, dim=1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        return h_new, c_new

    def forward(self, x: torch.Tensor, state: TemporalState) -> TemporalState:
        if x.shape[-2:] != state.h.shape[-2:]:
            raise ValueError(
                f"input grid {tuple(x.shape[-2:])} misaligned with state "
                f"{tuple(state.h.shape[-2:])}"
            )
        h, c = self.step(x[None], state.h[None], state.c[None])
        return TemporalState(h=h[0], c=c[0])


def update_temporal(cell: ConvLSTMCell, f_t: torch.Tensor, state: TemporalState) -> TemporalState:
    """Advance the recurrent prior with this frame's quantized motion latent."""
    return cell(f_t, state)


class FactorizedGaussianPrior(nn.Module):
    """Learned per-channel Gaussian used to code hyper latents."""

    def __init__(self, channels: int):
        super().__init__()
        self.mu = nn.Parameter(torch.zeros(channels))
        self.sigma_raw = nn.Parameter(torch.full((channels,), 0.5))

    def params(self, shape: tuple[int, ...]) -> GaussianParams:
        c, h, w = shape[-3:]
        mu = self.mu[:, None, None].expand(c, h, w)
        sigma = (SIGMA_MIN + F.softplus(self.sigma_raw))[:, None, None].expand(c, h, w)
        if len(shape) == 4:
            mu = mu[None].expand(shape[0], c, h, w)
            sigma = sigma[None].expand(shape[0], c, h, w)
        return GaussianParams(mu=mu, sigma=sigma)


# ---------------------------------------------------------------------------
# Likelihoods and rate estimation
# ---------------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def symbol_likelihood(
    x: torch.Tensor | float,
    mu: torch.Tensor | float,
    sigma: torch.Tensor | float,
    p_min: float | None = None,
) -> torch.Tensor:
    """Probability mass of a quantized element under N(mu, sigma^2) * U(-1/2, 1/2).

    The optional ``p_min`` floor is what the coder enforces; it is off by
    default because an unconditional floor breaks normalization over the
    integer lattice.
    """
    if not torch.is_tensor(x):
        x = torch.as_tensor(x, dtype=torch.float64)
    mu = torch.as_tensor(mu)
    sigma = torch.as_tensor(sigma)
    hi = (x - mu + 0.5) / sigma
    lo = (x - mu - 0.5) / sigma
    p = 0.5 * (torch.erf(hi / _SQRT2) - torch.erf(lo / _SQRT2))
    if p_min is not None:
        p = torch.clamp(p, min=p_min)
    return p


def estimate_rate(values: torch.Tensor, params: GaussianParams,
                  p_min: float = P_MIN) -> torch.Tensor:
    """Total information content in bits, with the coder's probability floor."""
    if values.shape != params.mu.shape:
        raise ValueError(f"latent {tuple(values.shape)} vs params {tuple(params.mu.shape)}")
    p = symbol_likelihood(values, params.mu, params.sigma, p_min=p_min)
    return -torch.log2(p).sum()


def estimate_factorized_rate(values: torch.Tensor, prior: FactorizedGaussianPrior,
                             p_min: float = P_MIN) -> torch.Tensor:
    return estimate_rate(values, prior.params(tuple(values.shape)), p_min=p_min)


# ---------------------------------------------------------------------------
# Latent entropy model + serial coding loops
# ---------------------------------------------------------------------------

class LatentEntropyModel(nn.Module):
    """Context modeling, rate estimation, and serial coding for one latent kind."""

    def __init__(
        self,
        context_channels: int = 12,
        hyper_feature_channels: int = 16,
        temporal_channels: int = 0,
        hidden: int = 32,
    ):
        super().__init__()
        self.context = SpatialContext(context_channels)
        self.aggregator = PriorAggregator(
            spatial_channels=context_channels,
            hyper_channels=hyper_feature_channels,
            temporal_channels=temporal_channels,
            hidden=hidden,
        )
        self.temporal_channels = temporal_channels

    def params(
        self,
        volume: torch.Tensor,
        hyper_feats: torch.Tensor,
        temporal_feats: torch.Tensor | None = None,
    ) -> GaussianParams:
        """Vectorized parameter pass over a full (C, h, w) quantized volume."""
        return self.aggregator(self.context(volume), hyper_feats, temporal_feats)

    def rate(
        self,
        volume: torch.Tensor,
        hyper_feats: torch.Tensor,
        temporal_feats: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return estimate_rate(volume, self.params(volume, hyper_feats, temporal_feats))

    @torch.no_grad()
    def _serial(
        self,
        shape: tuple[int, int, int],
        dither: float,
        hyper_feats: torch.Tensor,
        temporal_feats: torch.Tensor | None,
        symbols: torch.Tensor | None,
        encoder: RangeEncoder | None,
        decoder: RangeDecoder | None,
        trace: list | None,
    ) -> torch.Tensor:
        """One loop for both directions; context rebuilt from coded values only."""
        c_n, h, w = shape
        half = self.context.kernel // 2
        padded = torch.zeros(c_n + 2 * half, h + 2 * half, w + 2 * half)
        mw = self.context.masked_weight()
        if self.temporal_channels and temporal_feats is None:
            temporal_feats = torch.zeros(self.temporal_channels, h, w)
        for c in range(c_n):
            for y in range(h):
                for x in range(w):
                    ctx = self.context.at(padded, c, y, x, weight=mw)
                    feats = [ctx, hyper_feats[:, y, x]]
                    if self.temporal_channels:
                        feats.append(temporal_feats[:, y, x])
                    mu, sigma = self.aggregator.at(torch.cat(feats))
                    if trace is not None:
                        trace.append(ctx.clone())
                    table = gaussian_cdf_table(float(mu) + dither, float(sigma))
                    if symbols is not None:
                        k = int(symbols[c, y, x])
                        encoder.encode(k, table)
                    else:
                        k = decoder.decode(table)
                    padded[c + half, y + half, x + half] = float(k) - dither
        return padded[half : half + c_n, half : half + h, half : half + w].clone()

    def serial_encode(
        self,
        encoder: RangeEncoder,
        symbols: torch.Tensor,
        dither: float,
        hyper_feats: torch.Tensor,
        temporal_feats: torch.Tensor | None = None,
        trace: list | None = None,
    ) -> torch.Tensor:
        """Feed all symbols through ``encoder``; returns the values the decoder will see."""
        return self._serial(
            tuple(symbols.shape), dither, hyper_feats, temporal_feats,
            symbols, encoder, None, trace,
        )

    def serial_decode(
        self,
        decoder: RangeDecoder,
        shape: tuple[int, int, int],
        dither: float,
        hyper_feats: torch.Tensor,
        temporal_feats: torch.Tensor | None = None,
        trace: list | None = None,
    ) -> torch.Tensor:
        return self._serial(
            shape, dither, hyper_feats, temporal_feats, None, None, decoder, trace,
        )


@torch.no_grad()
def code_factorized(
    prior: FactorizedGaussianPrior,
    dither: float,
    shape: tuple[int, int, int],
    symbols: torch.Tensor | None = None,
    encoder: RangeEncoder | None = None,
    decoder: RangeDecoder | None = None,
) -> torch.Tensor:
    """Raster-order coding of a hyper latent under the factorized prior."""
    c_n, h, w = shape
    mu = prior.mu.detach()
    sigma = SIGMA_MIN + F.softplus(prior.sigma_raw.detach())
    tables = [gaussian_cdf_table(float(mu[c]) + dither, float(sigma[c])) for c in range(c_n)]
    out = torch.zeros(shape)
    for c in range(c_n):
        t = tables[c]
        for y in range(h):
            for x in range(w):
                if symbols is not None:
                    k = int(symbols[c, y, x])
                    encoder.encode(k, t)
                else:
                    k = decoder.decode(t)
                out[c, y, x] = float(k) - dither
    return out
