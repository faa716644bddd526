"""Inter coding: motion fusion/pyramid decoding, multiscale compensation,
residual coding, temporal entropy priors, and GoP orchestration.

The motion path concatenates current and reference frames, fuses them with
the shared four-stage analysis transform, and decodes the quantized motion
features into a pyramid of displacement fields.  Compensation warps a feature
pyramid of the reference at every scale and fuses top-down into a prediction;
the displaced residual goes through a second transform codec.  A ConvLSTM
over quantized motion latents carries entropy priors across P-frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .bitstream import FRAME_I, FRAME_P, Bitstream, BitstreamHeader, FrameRecord
from .checkpoint import (
    arrays_to_state_dict,
    load_archive,
    model_identity,
    save_archive,
    state_dict_to_arrays,
)
from .entropy import (
    ConvLSTMCell,
    FactorizedGaussianPrior,
    LatentEntropyModel,
    TemporalState,
    code_factorized,
    estimate_factorized_rate,
    estimate_rate,
)
from .errors import DecodeError, FormatError, ModelMismatchError
from .intra import (
    SEED_ROLE_HYPER,
    SEED_ROLE_MAIN,
    SEED_ROLE_MOTION_HYPER,
    SEED_ROLE_MOTION_MAIN,
    IntraCodec,
    TensorCodec,
    check_payload,
    frame_seed,
)
from .media import Frame, VideoSequence
from .rangecoder import RangeDecoder, RangeEncoder
from .trainutil import check_finite, step_noise, step_rng
from .vae import (
    DOWN_FACTOR,
    HYPER_FACTOR,
    EngineConfig,
    HyperDecoder,
    HyperEncoder,
    MainEncoder,
    crop_to,
    dither_from_seed,
    pad_to_multiple,
    quantize_to_symbols,
    symbols_to_values,
    universal_quantize,
)

PYRAMID_SCALES = 4


def warp(src: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinear backward warp; out-of-range samples clamp to the border.

    ``src`` is (B, C, H, W); ``flow`` is (B, 2, H, W) in pixels with channel 0
    the horizontal displacement dx and channel 1 the vertical dy, so
    ``out[y, x] = src[y + dy, x + dx]``.  Implemented with explicit gathers so
    integer displacements (zero flow included) reproduce samples exactly; the
    result is differentiable in both ``src`` and ``flow``.
    """
    if src.dim() != 4 or flow.dim() != 4 or flow.shape[1] != 2:
        raise FormatError(f"warp expects (B,C,H,W) and (B,2,H,W), got "
                          f"{tuple(src.shape)} / {tuple(flow.shape)}")
    if src.shape[-2:] != flow.shape[-2:]:
        raise FormatError(f"flow grid {tuple(flow.shape[-2:])} must match "
                          f"source {tuple(src.shape[-2:])}")
    b, c, h, w = src.shape
    ys = torch.arange(h, dtype=src.dtype, device=src.device)
    xs = torch.arange(w, dtype=src.dtype, device=src.device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    px = (gx[None] + flow[:, 0]).clamp(0, w - 1)
    py = (gy[None] + flow[:, 1]).clamp(0, h - 1)
    x0 = px.floor()
    y0 = py.floor()
    wx = (px - x0)[:, None]
    wy = (py - y0)[:, None]
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = src.reshape(b, c, h * w)

    def gather(yy, xx):
        idx = (yy * w + xx).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    v00 = gather(y0, x0)
    v01 = gather(y0, x1)
    v10 = gather(y1, x0)
    v11 = gather(y1, x1)
    return (
        v00 * (1 - wx) * (1 - wy)
        + v01 * wx * (1 - wy)
        + v10 * (1 - wx) * wy
        + v11 * wx * wy
    )


@dataclass
class MultiscaleFlow:
    """Displacement pyramid; ``flows[s-1]`` has shape (2, H/2^(s-1), W/2^(s-1))."""

    flows: list[torch.Tensor]

    def __post_init__(self):
        if len(self.flows) < 3:
            raise FormatError(f"need at least 3 scales, got {len(self.flows)}")
        h, w = self.flows[0].shape[-2:]
        for s, f in enumerate(self.flows):
            if f.shape[-3] != 2:
                raise FormatError(f"scale {s + 1} is not a 2-channel field")
            if f.shape[-2:] != (h >> s, w >> s):
                raise FormatError(
                    f"scale {s + 1} dims {tuple(f.shape[-2:])} != {(h >> s, w >> s)}"
                )
            if not bool(torch.isfinite(f).all()):
                raise FormatError(f"scale {s + 1} contains non-finite values")

    def __len__(self) -> int:
        return len(self.flows)

    @property
    def finest(self) -> torch.Tensor:
        return self.flows[0]


def upsample_flow(flow: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Spatial upsampling with matching magnitude rescale."""
    up = F.interpolate(flow[None] if flow.dim() == 3 else flow,
                       scale_factor=factor, mode="bilinear", align_corners=False)
    up = up * float(factor)
    return up[0] if flow.dim() == 3 else up


class PyramidFlowDecoder(nn.Module):
    """Latent -> coarse-to-fine displacement fields.

    Fields are generated at 1/8 and 1/4 of frame resolution (heads start at
    zero so a fresh codec warps with the identity), then upsampled with
    magnitude scaling to 1/2 and full resolution.
    """

    def __init__(self, latent_channels: int, width: int = 32):
        super().__init__()
        self.stem = nn.Conv2d(latent_channels, width, 3, padding=1)
        self.up1 = nn.ConvTranspose2d(width, width, 5, stride=2, padding=2, output_padding=1)
        self.up2 = nn.ConvTranspose2d(width, width, 5, stride=2, padding=2, output_padding=1)
        self.head8 = nn.Conv2d(width, 2, 3, padding=1)
        self.head4 = nn.Conv2d(width, 2, 3, padding=1)
        for head in (self.head8, self.head4):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, latent: torch.Tensor) -> list[torch.Tensor]:
        """(C, h, w) or (B, C, h, w) -> flows at [1, 1/2, 1/4, 1/8] of frame size."""
        batched = latent.dim() == 4
        x = latent if batched else latent[None]
        t = F.relu(self.stem(x))
        t = F.relu(self.up1(t))
        f8 = self.head8(t)
        t = F.relu(self.up2(t))
        f4 = self.head4(t) + upsample_flow(f8)
        f2 = upsample_flow(f4)
        f1 = upsample_flow(f2)
        flows = [f1, f2, f4, f8]
        return flows if batched else [f[0] for f in flows]


class MotionCodec(nn.Module):
    """Fused-frame encoder + pyramidal flow decoder + temporal entropy priors."""

    def __init__(self, frame_channels: int, cfg: EngineConfig,
                 temporal_channels: int = 8, context_channels: int = 12,
                 flow_width: int = 32):
        super().__init__()
        if cfg.in_channels != 2 * frame_channels:
            raise ValueError("motion engine must ingest the concatenated frame pair")
        self.cfg = cfg
        self.frame_channels = frame_channels
        self.fusion_encoder = MainEncoder(cfg)
        self.flow_decoder = PyramidFlowDecoder(cfg.latent_channels, width=flow_width)
        self.hyper_encoder = HyperEncoder(cfg)
        self.hyper_decoder = HyperDecoder(cfg)
        self.entropy = LatentEntropyModel(
            context_channels=context_channels,
            hyper_feature_channels=cfg.hyper_feature_channels,
            temporal_channels=temporal_channels,
        )
        self.hyper_prior = FactorizedGaussianPrior(cfg.hyper_channels)
        self.temporal_cell = ConvLSTMCell(cfg.latent_channels, temporal_channels)
        self.temporal_channels = temporal_channels

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        ph = -(-height // DOWN_FACTOR) * DOWN_FACTOR
        pw = -(-width // DOWN_FACTOR) * DOWN_FACTOR
        return (self.cfg.latent_channels, ph // DOWN_FACTOR, pw // DOWN_FACTOR)

    def hyper_shape(self, height: int, width: int) -> tuple[int, int, int]:
        _, lh, lw = self.latent_shape(height, width)
        return (self.cfg.hyper_channels,
                -(-lh // HYPER_FACTOR), -(-lw // HYPER_FACTOR))

    def _hyper_feats(self, z: torch.Tensor, latent_hw: tuple[int, int]) -> torch.Tensor:
        return crop_to(self.hyper_decoder(z), latent_hw)

    def initial_state(self, height: int, width: int) -> TemporalState:
        _, lh, lw = self.latent_shape(height, width)
        return TemporalState.zeros(self.temporal_channels, lh, lw)

    def fuse(self, cur: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
        """Concatenate and fuse a (B, C, H, W) frame pair into motion features."""
        pair = torch.cat([cur, ref], dim=1)
        pair, _ = pad_to_multiple(pair)
        return self.fusion_encoder(pair)

    # -- training pass -----------------------------------------------------

    def train_pass(self, cur: torch.Tensor, ref: torch.Tensor, seed: int, step: int,
                   temporal_h: torch.Tensor | None = None, tag: int = 0):
        """Returns (flows, quantized latent, motion bits) with training relaxations.

        ``temporal_h`` is the batched (B, T, gh, gw) recurrent prior, zeros
        when the frame follows an intra frame.
        """
        y = self.fuse(cur, ref)
        z = self.hyper_encoder(y)
        y_q = universal_quantize(
            y, frame_seed(step, SEED_ROLE_MOTION_MAIN, seed ^ tag), mode="train")
        z_q = universal_quantize(
            z, frame_seed(step, SEED_ROLE_MOTION_HYPER, seed ^ tag), mode="train")
        flows = self.flow_decoder(y_q)
        y_n = y + step_noise(y.shape, seed, step, tag=tag * 4 + 5).to(y)
        z_n = z + step_noise(z.shape, seed, step, tag=tag * 4 + 6).to(z)
        hyper_feats = self._hyper_feats(z_q, y.shape[-2:])
        params = self.entropy.params(y_n, hyper_feats, temporal_h)
        bits = estimate_rate(y_n, params) + estimate_factorized_rate(z_n, self.hyper_prior)
        return flows, y_q, bits

    # -- actual coding -------------------------------------------------------

    @torch.no_grad()
    def encode_motion(self, cur: torch.Tensor, ref: torch.Tensor,
                      seeds: tuple[int, int], state: TemporalState,
                      context_trace: list | None = None):
        """Code the motion latent; returns (payload, latent_hat, stats)."""
        if cur.shape != ref.shape:
            raise FormatError(f"frame pair shapes differ: {tuple(cur.shape)} vs "
                              f"{tuple(ref.shape)}")
        seed_y, seed_z = seeds
        y = self.fuse(cur[None], ref[None])[0]
        z = self.hyper_encoder(y[None])[0]
        sym_z = quantize_to_symbols(z, seed_z)
        z_hat = symbols_to_values(sym_z, seed_z)
        sym_y = quantize_to_symbols(y, seed_y)
        y_hat = symbols_to_values(sym_y, seed_y)
        hyper_feats = self._hyper_feats(z_hat[None], y.shape[-2:])[0]

        enc = RangeEncoder()
        code_factorized(self.hyper_prior, dither_from_seed(seed_z), tuple(z.shape),
                        symbols=sym_z, encoder=enc)
        self.entropy.serial_encode(enc, sym_y, dither_from_seed(seed_y), hyper_feats,
                                   temporal_feats=state.h, trace=context_trace)
        body = enc.finish()
        payload = struct.pack(">H", len(body) & 0xFFFF) + body

        est = float(
            estimate_rate(y_hat, self.entropy.params(y_hat, hyper_feats, state.h))
            + estimate_factorized_rate(z_hat, self.hyper_prior)
        )
        stats = {"payload_bits": 8 * len(payload), "estimate_bits": est}
        return payload, y_hat, stats

    @torch.no_grad()
    def decode_motion(self, payload: bytes, seeds: tuple[int, int],
                      height: int, width: int, state: TemporalState,
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
        return self.entropy.serial_decode(
            dec, latent_shape,
            dither_from_seed(seed_y), hyper_feats, temporal_feats=state.h,
            trace=context_trace,
        )


class MultiscaleCompensation(nn.Module):
    """Warp a reference feature pyramid by per-scale flows and fuse a prediction."""

    def __init__(self, frame_channels: int, width: int = 16):
        super().__init__()
        self.feat0 = nn.Conv2d(frame_channels, width, 3, padding=1)
        self.down = nn.ModuleList(
            [nn.Conv2d(width, width, 5, stride=2, padding=2) for _ in range(PYRAMID_SCALES - 1)]
        )
        self.fuse_top = nn.Conv2d(width, width, 3, padding=1)
        self.fuse = nn.ModuleList(
            [nn.Conv2d(2 * width, width, 3, padding=1) for _ in range(PYRAMID_SCALES - 1)]
        )
        self.refine = nn.Conv2d(width, frame_channels, 3, padding=1)
        nn.init.zeros_(self.refine.weight)
        nn.init.zeros_(self.refine.bias)

    def forward(self, ref: torch.Tensor, flows: list[torch.Tensor]) -> torch.Tensor:
        """(B, C, H, W) reference + per-scale (B, 2, ...) flows -> prediction."""
        if len(flows) != PYRAMID_SCALES:
            raise FormatError(f"expected {PYRAMID_SCALES} flow scales, got {len(flows)}")
        feats = [F.relu(self.feat0(ref))]
        for conv in self.down:
            feats.append(F.relu(conv(feats[-1])))
        warped = [warp(f, fl) for f, fl in zip(feats, flows)]
        u = F.relu(self.fuse_top(warped[-1]))
        for s in range(PYRAMID_SCALES - 2, -1, -1):
            up = F.interpolate(u, size=warped[s].shape[-2:], mode="bilinear",
                               align_corners=False)
            u = F.relu(self.fuse[s](torch.cat([warped[s], up], dim=1)))
        return warp(ref, flows[0]) + self.refine(u)


class InterCodec(nn.Module):
    """Motion codec + multiscale compensation + residual codec."""

    def __init__(self, frame_channels: int = 1,
                 motion_cfg: EngineConfig | None = None,
                 residual_cfg: EngineConfig | None = None,
                 temporal_channels: int = 8, context_channels: int = 12,
                 mcn_width: int = 16, lam: float = 256.0, lambda_index: int = 0):
        super().__init__()
        if motion_cfg is None:
            motion_cfg = EngineConfig(in_channels=2 * frame_channels)
        if residual_cfg is None:
            residual_cfg = EngineConfig(in_channels=frame_channels)
        if residual_cfg.in_channels != frame_channels:
            raise ValueError("residual engine channel count must match frames")
        self.frame_channels = frame_channels
        self.lam = float(lam)
        self.lambda_index = int(lambda_index)
        self.motion = MotionCodec(frame_channels, motion_cfg,
                                  temporal_channels=temporal_channels,
                                  context_channels=context_channels)
        self.compensation = MultiscaleCompensation(frame_channels, width=mcn_width)
        self.residual = TensorCodec(residual_cfg, context_channels=context_channels)

    # -- frame pipeline pieces ---------------------------------------------

    def predict(self, ref: torch.Tensor, motion_latent: torch.Tensor,
                height: int, width: int) -> tuple[torch.Tensor, MultiscaleFlow]:
        """Reference tensor (C, H, W) + decoded motion latent -> prediction."""
        flows_raw = self.motion.flow_decoder(motion_latent)
        ref_p, _ = pad_to_multiple(ref[None])
        pred = self.compensation(ref_p, [f[None] for f in flows_raw])[0]
        pred = crop_to(pred, (height, width))
        mcf = MultiscaleFlow(
            flows=[crop_to(f, (height >> s, width >> s)) for s, f in enumerate(flows_raw)]
        )
        return pred, mcf

    def config_echo(self) -> dict:
        return {
            "kind": "inter",
            "frame_channels": self.frame_channels,
            "motion_engine": self.motion.cfg.to_dict(),
            "residual_engine": self.residual.cfg.to_dict(),
            "temporal_channels": self.motion.temporal_channels,
            "context_channels": self.motion.entropy.context.out_channels,
            "lambda": self.lam,
            "lambda_index": self.lambda_index,
        }

    def save(self, path) -> int:
        arrays = state_dict_to_arrays(self.state_dict())
        save_archive(path, arrays, self.config_echo())
        return model_identity(arrays)

    @property
    def model_id(self) -> int:
        return model_identity(state_dict_to_arrays(self.state_dict()))

    @classmethod
    def load(cls, path) -> "InterCodec":
        arrays, config = load_archive(path)
        if config.get("kind") != "inter":
            raise DecodeError(f"{path}: not an inter checkpoint")
        model = cls(
            frame_channels=config["frame_channels"],
            motion_cfg=EngineConfig.from_dict(config["motion_engine"]),
            residual_cfg=EngineConfig.from_dict(config["residual_engine"]),
            temporal_channels=config["temporal_channels"],
            context_channels=config["context_channels"],
            lam=config["lambda"],
            lambda_index=config["lambda_index"],
        )
        model.load_state_dict(arrays_to_state_dict(arrays))
        return model


def new_inter_codec(frame_channels: int = 1, seed: int = 0, **kw) -> InterCodec:
    torch.manual_seed(seed)
    return InterCodec(frame_channels=frame_channels, **kw)


def combined_model_id(intra: IntraCodec, inter: InterCodec | None) -> int:
    mid = intra.model_id
    if inter is not None:
        other = inter.model_id
        mid ^= ((other << 13) | (other >> 19)) & 0xFFFFFFFF
    return mid & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# GoP encode/decode
# ---------------------------------------------------------------------------

@torch.no_grad()
def encode_gop(
    seq: VideoSequence,
    intra: IntraCodec,
    inter: InterCodec | None = None,
    gop_size: int | None = None,
    seed_base: int = 0,
    guided=None,
    guided_qp: int | None = None,
    guided_block: int = 256,
    state_trace: list | None = None,
) -> tuple[Bitstream, list[Frame]]:
    """Low-delay coding: an intra frame heads each GoP, P-frames chain forward.

    When a guided-filter bank is supplied, every reconstruction is filtered
    in-loop against the original frame and the solved block weights travel in
    the frame's guided segment; the filtered frame becomes the next
    reference.  ``state_trace`` collects the recurrent prior state after
    every frame.  Returns the container plus the encoder-side
    reconstructions, which are bit-identical to what :func:`decode_gop`
    reproduces.
    """
    from .guided import filter_frame, qp_for_lambda_index

    gop = gop_size or seq.gop_size
    if gop < 1:
        raise FormatError(f"gop size must be >= 1, got {gop}")
    if len(seq) > 1 and inter is None:
        gop = 1  # intra-only fallback when no inter model is supplied
    header = BitstreamHeader(
        width=seq.width, height=seq.height, bit_depth=seq.bit_depth,
        gop_size=gop, model_id=combined_model_id(intra, inter),
        lambda_index=intra.lambda_index, frame_count=len(seq),
        colorspace=seq.colorspace, fps=seq.fps,
    )
    if guided is not None and guided_qp is None:
        guided_qp = qp_for_lambda_index(intra.lambda_index)
    stream = Bitstream(header=header)
    recons: list[Frame] = []
    state: TemporalState | None = None
    for t, frame in enumerate(seq.frames):
        if t % gop == 0:
            payload, seeds, recon, _ = intra.encode_frame(
                frame, frame_index=t, seed_base=seed_base)
            record = FrameRecord(frame_type=FRAME_I, seeds=seeds, payload=payload)
            if inter is not None:
                state = inter.motion.initial_state(seq.height, seq.width)
        else:
            record, recon, state = _encode_p_frame(
                frame, recons[-1], inter, t, seed_base, state)
        if guided is not None:
            recon, record.guided = filter_frame(
                recon, guided_qp, guided, source=frame, block=guided_block)
        if state_trace is not None:
            state_trace.append(state)
        stream.frames.append(record)
        recons.append(recon)
    return stream, recons


def _encode_p_frame(frame: Frame, ref: Frame, inter: InterCodec, t: int,
                    seed_base: int, state: TemporalState):
    cur = torch.from_numpy(frame.to_normalized())
    refx = torch.from_numpy(ref.to_normalized())
    h, w = frame.height, frame.width
    m_seeds = (
        frame_seed(t, SEED_ROLE_MOTION_MAIN, seed_base),
        frame_seed(t, SEED_ROLE_MOTION_HYPER, seed_base),
    )
    motion_payload, m_latent, _ = inter.motion.encode_motion(cur, refx, m_seeds, state)
    pred, _ = inter.predict(refx, m_latent, h, w)

    r = cur - pred
    r_seeds = (
        frame_seed(t, SEED_ROLE_MAIN, seed_base),
        frame_seed(t, SEED_ROLE_HYPER, seed_base),
    )
    res_payload, r_hat, _ = inter.residual.encode_tensor(r, r_seeds)
    recon_t = (pred + r_hat).clamp(0, 1)
    recon = Frame.from_normalized(recon_t.numpy(), bit_depth=frame.bit_depth,
                                  colorspace=frame.colorspace)
    new_state = inter.motion.temporal_cell(m_latent, state)
    record = FrameRecord(frame_type=FRAME_P, seeds=m_seeds + r_seeds,
                         motion=motion_payload, payload=res_payload)
    return record, recon, new_state


@torch.no_grad()
def decode_gop(
    stream: Bitstream,
    intra: IntraCodec,
    inter: InterCodec | None = None,
    guided=None,
    guided_qp: int | None = None,
    state_trace: list | None = None,
) -> VideoSequence:
    """Reconstruct every frame of a container produced by :func:`encode_gop`."""
    from .guided import apply_filter_payload, qp_for_lambda_index

    h = stream.header
    expected = combined_model_id(intra, inter)
    if h.model_id != expected:
        raise ModelMismatchError(
            f"bitstream model id {h.model_id:#010x} != supplied models {expected:#010x}"
        )
    if len(stream.frames) != h.frame_count:
        raise DecodeError("frame record count does not match header")
    if guided is not None and guided_qp is None:
        guided_qp = qp_for_lambda_index(h.lambda_index)
    frames: list[Frame] = []
    state: TemporalState | None = None
    for t, rec in enumerate(stream.frames):
        if rec.frame_type == FRAME_I:
            if len(rec.seeds) != 2:
                raise DecodeError(f"I-frame {t} carries {len(rec.seeds)} seeds, wants 2")
            frame = intra.decode_frame(rec.payload, rec.seeds, h.height, h.width,
                                       bit_depth=h.bit_depth, colorspace=h.colorspace)
            if inter is not None:
                state = inter.motion.initial_state(h.height, h.width)
        else:
            if inter is None:
                raise DecodeError("P-frame present but no inter model supplied")
            if not frames:
                raise DecodeError("P-frame before any intra frame")
            if len(rec.seeds) != 4:
                raise DecodeError(f"P-frame {t} carries {len(rec.seeds)} seeds, wants 4")
            frame, state = _decode_p_frame(rec, frames[-1], inter, h, state)
        if rec.guided:
            if guided is None:
                raise DecodeError(
                    f"frame {t} carries guided weights but no filter bank was supplied"
                )
            frame = apply_filter_payload(frame, guided_qp, guided, rec.guided)
        if state_trace is not None:
            state_trace.append(state)
        frames.append(frame)
    return VideoSequence(frames=frames, fps=h.fps, gop_size=h.gop_size)


def _decode_p_frame(rec: FrameRecord, ref: Frame, inter: InterCodec,
                    header: BitstreamHeader, state: TemporalState):
    refx = torch.from_numpy(ref.to_normalized())
    h, w = header.height, header.width
    m_latent = inter.motion.decode_motion(rec.motion, rec.seeds[:2], h, w, state)
    pred, _ = inter.predict(refx, m_latent, h, w)
    r_hat = inter.residual.decode_tensor(rec.payload, rec.seeds[2:], h, w)
    recon_t = (pred + r_hat).clamp(0, 1)
    frame = Frame.from_normalized(recon_t.numpy(), bit_depth=header.bit_depth,
                                  colorspace=header.colorspace)
    new_state = inter.motion.temporal_cell(m_latent, state)
    return frame, new_state


# ---------------------------------------------------------------------------
# Staged training
# ---------------------------------------------------------------------------

@dataclass
class InterTrainSchedule:
    motion_steps: int = 300
    residual_steps: int = 300
    joint_steps: int = 200
    lr: float = 1e-4
    batch_size: int = 4
    # reference degradation during training; at coding time references are
    # lossy reconstructions, so clean-ref training underestimates that noise
    ref_noise: float = 0.0

    def steps_for(self, stage: str) -> int:
        return {"motion": self.motion_steps, "residual": self.residual_steps,
                "joint": self.joint_steps}[stage]


INTER_STAGES = ("motion", "residual", "joint")
_STAGE_SALT = {"motion": 0, "residual": 0x5F5E1, "joint": 0xA11CE}


def _sample_frames(clips: list[np.ndarray], rng: np.random.Generator,
                   batch_size: int, span: int) -> list[torch.Tensor]:
    """Batch of ``span`` consecutive frames; earlier clips repeat frames if short."""
    stacks: list[list[np.ndarray]] = [[] for _ in range(span)]
    for _ in range(batch_size):
        clip = clips[int(rng.integers(len(clips)))]
        t = int(rng.integers(max(len(clip) - span + 1, 1)))
        for k in range(span):
            stacks[k].append(clip[min(t + k, len(clip) - 1)])
    out = []
    for frames in stacks:
        t = torch.from_numpy(np.stack(frames).astype(np.float32))
        out.append(t[:, None] if t.dim() == 3 else t)
    return out


def _sample_pairs(clips: list[np.ndarray], rng: np.random.Generator,
                  batch_size: int) -> tuple[torch.Tensor, torch.Tensor]:
    ref, cur = _sample_frames(clips, rng, batch_size, span=2)
    return ref, cur


def _stage_parameters(model: InterCodec, stage: str):
    if stage == "motion":
        return list(model.motion.parameters()) + list(model.compensation.parameters())
    if stage == "residual":
        return list(model.residual.parameters())
    return list(model.parameters())


def _stage_loss(model: InterCodec, stage: str, frames: list[torch.Tensor],
                seed: int, step: int):
    ref, cur = frames[0], frames[1]
    npix = float(cur.shape[0] * cur.shape[-1] * cur.shape[-2])
    if stage == "motion":
        flows, _, m_bits = model.motion.train_pass(cur, ref, seed, step)
        pred = model.compensation(ref, flows)
        dist = F.mse_loss(pred, cur)
        bpp = m_bits / npix
    elif stage == "residual":
        with torch.no_grad():
            flows, _, _ = model.motion.train_pass(cur, ref, seed, step)
            pred = model.compensation(ref, flows)
        r_hat, r_bits = model.residual.train_pass(cur - pred, seed, step, tag=3)
        dist = F.mse_loss(pred + r_hat, cur)
        bpp = r_bits / npix
    else:
        # joint refinement codes two P-frames back to back: the second one
        # references the first reconstruction and uses the recurrent prior,
        # matching what the GoP loop does at coding time
        nxt = frames[2]
        flows1, y_q1, m_bits1 = model.motion.train_pass(cur, ref, seed, step)
        pred1 = model.compensation(ref, flows1)
        r_hat1, r_bits1 = model.residual.train_pass(cur - pred1, seed, step, tag=3)
        rec1 = (pred1 + r_hat1).clamp(0, 1)
        b = y_q1.shape[0]
        t_ch = model.motion.temporal_channels
        h0 = y_q1.new_zeros(b, t_ch, *y_q1.shape[-2:])
        h1, _ = model.motion.temporal_cell.step(y_q1, h0, h0.clone())
        flows2, _, m_bits2 = model.motion.train_pass(nxt, rec1, seed, step,
                                                     temporal_h=h1, tag=9)
        pred2 = model.compensation(rec1, flows2)
        r_hat2, r_bits2 = model.residual.train_pass(nxt - pred2, seed, step, tag=11)
        dist = 0.5 * (F.mse_loss(rec1, cur) + F.mse_loss(pred2 + r_hat2, nxt))
        bpp = (m_bits1 + r_bits1 + m_bits2 + r_bits2) / (2 * npix)
    return model.lam * dist + bpp, bpp, dist


def train_inter(
    model: InterCodec,
    clips: list[np.ndarray],
    schedule: InterTrainSchedule,
    seed: int,
    resume: dict | None = None,
) -> tuple[dict[str, list[dict]], dict]:
    """Three-stage schedule: motion+compensation, then residual, then joint.

    Stage 1 minimizes warped-prediction error plus motion rate; stage 2
    trains the residual codec against frozen predictions with residual-only
    rate; stage 3 unfreezes everything with both rates in the loss.  Fully
    seeded; batch order and noise derive from (seed, stage, step), so a run
    resumed from the returned state matches an uninterrupted one.

    Returns (per-stage histories, resume state for the next call).
    """
    if not clips:
        raise ValueError("empty clip dataset")
    for i, c in enumerate(clips):
        if len(c) < 2:
            raise ValueError(f"clip {i} has fewer than 2 frames")
    torch.manual_seed(seed)
    history: dict[str, list[dict]] = {s: [] for s in INTER_STAGES}
    start_stage = 0
    start_step = 0
    opt_state = None
    if resume:
        start_stage = INTER_STAGES.index(resume["stage"])
        start_step = resume["step"]
        opt_state = resume.get("optimizer")

    # resume cursor points at the last stage that actually ran steps
    cursor_stage = INTER_STAGES[start_stage]
    cursor_step = start_step
    for stage_idx in range(start_stage, len(INTER_STAGES)):
        stage = INTER_STAGES[stage_idx]
        steps = schedule.steps_for(stage)
        first = start_step if stage_idx == start_stage else 0
        if first >= steps:
            continue
        opt = torch.optim.Adam(_stage_parameters(model, stage), lr=schedule.lr)
        if stage_idx == start_stage and opt_state is not None:
            opt.load_state_dict(opt_state)
        for step in range(first, steps):
            rng = step_rng(seed ^ _STAGE_SALT[stage], step)
            span = 3 if stage == "joint" else 2
            frames = _sample_frames(clips, rng, schedule.batch_size, span)
            # alternate batches see degraded references so the codec stays
            # robust to lossy reference chains without forgetting that clean
            # static content codes to almost nothing
            if schedule.ref_noise > 0 and stage != "motion" and step % 2 == 0:
                frames[0] = frames[0] + schedule.ref_noise * 2.0 * step_noise(
                    frames[0].shape, seed ^ _STAGE_SALT[stage], step, tag=7
                ).to(frames[0])
            loss, bpp, dist = _stage_loss(model, stage, frames, seed, step)
            check_finite(loss, step, {"bpp": bpp, "distortion": dist})
            opt.zero_grad()
            loss.backward()
            opt.step()
            history[stage].append(
                {"stage": stage, "step": step, "loss": float(loss.detach()),
                 "rate_bpp": float(bpp.detach()), "distortion": float(dist.detach())}
            )
        cursor_stage = stage
        cursor_step = steps
        opt_state = opt.state_dict()
    final_state = {"stage": cursor_stage, "step": cursor_step, "optimizer": opt_state}
    return history, final_state
