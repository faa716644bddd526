"""Intra-frame codec: compression engine + entropy model + training loop.

:class:`TensorCodec` is the generic coded-transform body (pad, quantize, code
hyper then main latent, reconstruct).  :class:`IntraCodec` wraps it for
integer frames and owns the rate-distortion training loop; the inter module
reuses :class:`TensorCodec` directly for displaced residuals.
"""

from __future__ import annotations

import struct

import numpy as np
import torch
from torch import nn

from .checkpoint import (
    arrays_to_state_dict,
    load_archive,
    model_identity,
    save_archive,
    state_dict_to_arrays,
)
from .entropy import (
    FactorizedGaussianPrior,
    LatentEntropyModel,
    code_factorized,
    estimate_factorized_rate,
    estimate_rate,
)
from .errors import DecodeError
from .media import Frame
from .rangecoder import RangeDecoder, RangeEncoder
from .trainutil import check_finite, distortion_loss, step_noise, step_rng
from .vae import (
    DOWN_FACTOR,
    HYPER_FACTOR,
    CompressionEngine,
    EngineConfig,
    crop_to,
    dither_from_seed,
    pad_to_multiple,
    quantize_to_symbols,
    symbols_to_values,
    universal_quantize,
)

# seed roles recorded in each frame header, in segment order
SEED_ROLE_MOTION_MAIN = 0
SEED_ROLE_MOTION_HYPER = 1
SEED_ROLE_MAIN = 2
SEED_ROLE_HYPER = 3


def frame_seed(frame_index: int, role: int, base: int = 0) -> int:
    return (base * 0x01000193 + frame_index * 16 + role) & 0xFFFFFFFF


def check_payload(payload: bytes) -> bytes:
    """Validate the 2-byte length check and return the coded body."""
    if len(payload) < 2:
        raise DecodeError("payload shorter than its length check")
    (expected,) = struct.unpack(">H", payload[:2])
    body = payload[2:]
    if len(body) & 0xFFFF != expected:
        raise DecodeError(
            f"payload length check failed: {len(body) & 0xFFFF} != {expected}"
        )
    return body


class TensorCodec(nn.Module):
    """VAE transform coding of a (C, H, W) tensor to decodable bytes."""

    def __init__(self, cfg: EngineConfig, context_channels: int = 12):
        super().__init__()
        self.cfg = cfg
        self.engine = CompressionEngine(cfg)
        self.entropy = LatentEntropyModel(
            context_channels=context_channels,
            hyper_feature_channels=cfg.hyper_feature_channels,
        )
        self.hyper_prior = FactorizedGaussianPrior(cfg.hyper_channels)

    # -- shape bookkeeping -----------------------------------------------

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        ph = -(-height // DOWN_FACTOR) * DOWN_FACTOR
        pw = -(-width // DOWN_FACTOR) * DOWN_FACTOR
        return (self.cfg.latent_channels, ph // DOWN_FACTOR, pw // DOWN_FACTOR)

    def hyper_shape(self, height: int, width: int) -> tuple[int, int, int]:
        _, lh, lw = self.latent_shape(height, width)
        return (self.cfg.hyper_channels,
                -(-lh // HYPER_FACTOR), -(-lw // HYPER_FACTOR))

    def _hyper_feats(self, z: torch.Tensor, latent_hw: tuple[int, int]) -> torch.Tensor:
        # decoded side information upsamples to 4x the hyper grid, which can
        # overshoot odd latent dims; align by cropping
        return crop_to(self.engine.hyper_decode(z), latent_hw)

    # -- differentiable rate/reconstruction (training) ---------------------

    def train_pass(self, batch: torch.Tensor, seed: int, step: int, tag: int = 0):
        """Returns (reconstruction, total_bits) under the training relaxations."""
        y = self.engine.main_encode(batch)
        z = self.engine.hyper_encode(y)
        y_q = universal_quantize(y, frame_seed(step, SEED_ROLE_MAIN, seed ^ tag), mode="train")
        z_q = universal_quantize(z, frame_seed(step, SEED_ROLE_HYPER, seed ^ tag), mode="train")
        recon = self.engine.main_decode(y_q)
        y_n = y + step_noise(y.shape, seed, step, tag=tag * 4 + 1).to(y)
        z_n = z + step_noise(z.shape, seed, step, tag=tag * 4 + 2).to(z)
        hyper_feats = self._hyper_feats(z_q, y.shape[-2:])
        params = self.entropy.params(y_n, hyper_feats)
        bits = estimate_rate(y_n, params) + estimate_factorized_rate(z_n, self.hyper_prior)
        return recon, bits

    # -- actual coding ------------------------------------------------------
    #
    # each payload is a 2-byte length check followed by ONE arithmetic
    # stream carrying the hyper symbols then the main symbols; sharing the
    # stream avoids a second coder flush and a length prefix per tensor

    @torch.no_grad()
    def encode_tensor(self, x: torch.Tensor, seeds: tuple[int, int],
                      context_trace: list | None = None):
        """Code one (C, H, W) tensor; returns (payload, x_hat, stats).

        ``x_hat`` is exactly what :meth:`decode_tensor` will reproduce.
        """
        seed_y, seed_z = seeds
        orig = x.shape[-2:]
        xp, _ = pad_to_multiple(x[None])
        y = self.engine.main_encode(xp)[0]
        z = self.engine.hyper_encode(y[None])[0]

        sym_z = quantize_to_symbols(z, seed_z)
        z_hat = symbols_to_values(sym_z, seed_z)
        hyper_feats = self._hyper_feats(z_hat[None], y.shape[-2:])[0]
        sym_y = quantize_to_symbols(y, seed_y)
        y_hat = symbols_to_values(sym_y, seed_y)

        enc = RangeEncoder()
        code_factorized(self.hyper_prior, dither_from_seed(seed_z), tuple(z.shape),
                        symbols=sym_z, encoder=enc)
        self.entropy.serial_encode(enc, sym_y, dither_from_seed(seed_y), hyper_feats,
                                   trace=context_trace)
        body = enc.finish()
        payload = struct.pack(">H", len(body) & 0xFFFF) + body

        x_hat = crop_to(self.engine.main_decode(y_hat[None])[0], orig)
        est_bits = float(
            estimate_rate(y_hat, self.entropy.params(y_hat, hyper_feats))
            + estimate_factorized_rate(z_hat, self.hyper_prior)
        )
        stats = {"payload_bits": 8 * len(payload), "estimate_bits": est_bits}
        return payload, x_hat, stats

    @torch.no_grad()
    def decode_tensor(self, payload: bytes, seeds: tuple[int, int],
                      height: int, width: int,
                      context_trace: list | None = None) -> torch.Tensor:
        body = check_payload(payload)
        seed_y, seed_z = seeds
        dec = RangeDecoder(body)
        z_hat = code_factorized(
            self.hyper_prior, dither_from_seed(seed_z), self.hyper_shape(height, width),
            decoder=dec,
        )
        latent_shape = self.latent_shape(height, width)
        hyper_feats = self._hyper_feats(z_hat[None], latent_shape[-2:])[0]
        y_hat = self.entropy.serial_decode(
            dec, latent_shape,
            dither_from_seed(seed_y), hyper_feats, trace=context_trace,
        )
        return crop_to(self.engine.main_decode(y_hat[None])[0], (height, width))


class IntraCodec(TensorCodec):
    """One trained model per rate point (one lambda)."""

    def __init__(self, cfg: EngineConfig, lam: float = 256.0, lambda_index: int = 0,
                 context_channels: int = 12, distortion: str = "mse"):
        if lam <= 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        super().__init__(cfg, context_channels=context_channels)
        self.lam = float(lam)
        self.lambda_index = int(lambda_index)
        self.distortion = distortion

    def training_loss(self, batch: torch.Tensor, seed: int, step: int):
        """Rate-distortion loss on a (B, C, H, W) normalized batch."""
        recon, bits = self.train_pass(batch, seed, step)
        dist = distortion_loss(recon, batch, self.distortion)
        bpp = bits / float(batch.shape[0] * batch.shape[-1] * batch.shape[-2])
        return self.lam * dist + bpp, bpp, dist

    @torch.no_grad()
    def encode_frame(self, frame: Frame, frame_index: int = 0, seed_base: int = 0,
                     context_trace: list | None = None):
        """Returns ``(payload, seeds, reconstruction, stats)``; the returned
        reconstruction is bit-identical to what :meth:`decode_frame` emits."""
        x = torch.from_numpy(frame.to_normalized())
        seeds = (
            frame_seed(frame_index, SEED_ROLE_MAIN, seed_base),
            frame_seed(frame_index, SEED_ROLE_HYPER, seed_base),
        )
        payload, x_hat, stats = self.encode_tensor(x, seeds, context_trace=context_trace)
        recon = Frame.from_normalized(
            x_hat.clamp(0, 1).numpy(), bit_depth=frame.bit_depth,
            colorspace=frame.colorspace,
        )
        return payload, seeds, recon, stats

    @torch.no_grad()
    def decode_frame(self, payload: bytes, seeds: tuple[int, int],
                     height: int, width: int, bit_depth: int = 8,
                     colorspace: str = "mono",
                     context_trace: list | None = None) -> Frame:
        x_hat = self.decode_tensor(payload, seeds, height, width,
                                   context_trace=context_trace)
        return Frame.from_normalized(
            x_hat.clamp(0, 1).numpy(), bit_depth=bit_depth, colorspace=colorspace
        )

    # -- persistence -------------------------------------------------------

    def config_echo(self) -> dict:
        return {
            "kind": "intra",
            "engine": self.cfg.to_dict(),
            "lambda": self.lam,
            "lambda_index": self.lambda_index,
            "context_channels": self.entropy.context.out_channels,
            "distortion": self.distortion,
        }

    def save(self, path) -> int:
        arrays = state_dict_to_arrays(self.state_dict())
        save_archive(path, arrays, self.config_echo())
        return model_identity(arrays)

    @property
    def model_id(self) -> int:
        return model_identity(state_dict_to_arrays(self.state_dict()))

    @classmethod
    def load(cls, path) -> "IntraCodec":
        arrays, config = load_archive(path)
        if config.get("kind") != "intra":
            raise DecodeError(f"{path}: not an intra checkpoint")
        model = cls(
            EngineConfig.from_dict(config["engine"]),
            lam=config["lambda"],
            lambda_index=config["lambda_index"],
            context_channels=config["context_channels"],
            distortion=config.get("distortion", "mse"),
        )
        model.load_state_dict(arrays_to_state_dict(arrays))
        return model


def new_intra_codec(cfg: EngineConfig, lam: float, lambda_index: int = 0,
                    seed: int = 0, **kw) -> IntraCodec:
    torch.manual_seed(seed)
    return IntraCodec(cfg, lam=lam, lambda_index=lambda_index, **kw)


def train_intra(
    model: IntraCodec,
    patches: np.ndarray,
    steps: int,
    seed: int,
    batch_size: int = 8,
    lr: float = 1e-4,
    start_step: int = 0,
    optimizer_state: dict | None = None,
) -> tuple[list[dict], dict]:
    """Rate-distortion training on a (N, H, W) or (N, C, H, W) patch stack.

    Seeded and reproducible: batch order, dithers, and noise are all derived
    from ``(seed, step)``, so resuming from ``(start_step, optimizer_state)``
    matches an uninterrupted run.  Returns (per-step records, resume state).
    """
    if len(patches) == 0:
        raise ValueError("empty patch dataset")
    data = torch.from_numpy(np.asarray(patches, dtype=np.float32))
    if data.dim() == 3:
        data = data[:, None]
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    history = []
    for step in range(start_step, steps):
        rng = step_rng(seed, step)
        idx = rng.integers(0, len(data), size=min(batch_size, len(data)))
        batch = data[torch.from_numpy(idx.astype(np.int64))]
        loss, bpp, dist = model.training_loss(batch, seed, step)
        check_finite(loss, step, {"bpp": bpp, "distortion": dist})
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(
            {"step": step, "loss": float(loss.detach()), "rate_bpp": float(bpp.detach()),
             "distortion": float(dist.detach())}
        )
    return history, {"step": steps if steps > start_step else start_step,
                     "optimizer": opt.state_dict()}
