"""Guided shallow CNN filter with signaled least-squares channel weights.

A fixed 3,744-weight backbone maps the degraded luma to M=2 correction
channels.  Per block, the encoder solves a tiny least-squares problem for the
channel combination that best cancels the coding error, quantizes the two
coefficients to 1/64 steps in [-15, 15], and signals them; the decoder runs
the same backbone and applies the signaled combination.  Adaptation lives in
the signaled weights, so one small model serves many contents.
"""

from __future__ import annotations

import struct

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
from .errors import DecodeError, FormatError
from .media import Frame
from .trainutil import check_finite, halve_every, step_rng

M_CHANNELS = 2
WEIGHT_RANGE = 15.0
WEIGHT_STEP = 1.0 / 64.0
WEIGHT_BITS = 11
_WEIGHT_LEVELS = int(2 * WEIGHT_RANGE / WEIGHT_STEP)  # 1920 levels, fits 11 bits
DEFAULT_BLOCK = 256

# six QP intervals partitioning [0, 63]
QP_RANGES = ((0, 16), (17, 26), (27, 36), (37, 46), (47, 56), (57, 63))

# stand-in QPs for the rate ladder, coarsest model first
QP_STAND_INS = (63, 53, 43, 32)


def qp_for_lambda_index(lambda_index: int) -> int:
    """Map a rate-point index to the stand-in QP used for filter selection."""
    return QP_STAND_INS[min(max(lambda_index, 0), len(QP_STAND_INS) - 1)]

_LAYER_PLAN = ((1, 16), (16, 8), (8, 8), (8, 8), (8, 8), (8, 8), (8, M_CHANNELS))


class BaselineCNN(nn.Module):
    """Seven 3x3 conv layers, channels 1-16-8-8-8-8-8-2; 3,744 kernel weights."""

    def __init__(self):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.Conv2d(cin, cout, 3, padding=1) for cin, cout in _LAYER_PLAN
        )

    @property
    def weight_parameter_count(self) -> int:
        return sum(l.weight.numel() for l in self.layers)

    @property
    def output_channels(self) -> int:
        return _LAYER_PLAN[-1][1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) degraded luma -> (B, M, H, W) correction channels."""
        if x.dim() != 4 or x.shape[1] != 1:
            raise FormatError(f"backbone wants (B, 1, H, W), got {tuple(x.shape)}")
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


# ---------------------------------------------------------------------------
# Least-squares weight fitting
# ---------------------------------------------------------------------------

_COND_LIMIT = 1e12


def _gram_solve(r: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the normal equations with a ridge fallback for degenerate blocks."""
    gram = r.T @ r
    rhs = r.T @ d
    if not np.all(np.isfinite(gram)) or not np.all(np.isfinite(rhs)):
        raise FormatError("non-finite channel features in weight solve")
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        ridge = 1e-6 * np.trace(gram) / gram.shape[0] + 1e-12
        gram = gram + ridge * np.eye(gram.shape[0])
    return np.linalg.solve(gram, rhs), gram


def solve_weights(r: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Unquantized least-squares coefficients for stacked channels ``r``.

    ``r`` is (N, M) with one column per correction channel; ``d`` is the
    length-N error vector (source minus degraded).
    """
    r = np.asarray(r, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if r.ndim != 2 or r.shape[0] != d.shape[0]:
        raise FormatError(f"shape mismatch: R {r.shape} vs d {d.shape}")
    a, _ = _gram_solve(r, d)
    return a


def recon_error(r: np.ndarray, d: np.ndarray) -> float:
    """Residual energy |d|^2 - d^T R (R^T R)^-1 R^T d of the optimal fit."""
    r = np.asarray(r, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    a, _ = _gram_solve(r, d)
    return float(d @ d - (r.T @ d) @ a)


def quantize_weights(a: np.ndarray) -> np.ndarray:
    """Clamp to [-15, 15] and round to 1/64 steps; returns integer codes."""
    a = np.clip(np.asarray(a, dtype=np.float64), -WEIGHT_RANGE, WEIGHT_RANGE)
    return np.round(a / WEIGHT_STEP).astype(np.int64)


def dequantize_weights(codes: np.ndarray) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) * WEIGHT_STEP


def apply_correction(x: np.ndarray, r: np.ndarray, a: np.ndarray,
                     clip: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """x + sum_i a_i r_i, clipped to the valid sample range."""
    x = np.asarray(x, dtype=np.float64)
    corr = x.reshape(-1) + np.asarray(r, dtype=np.float64) @ np.asarray(a, dtype=np.float64)
    return np.clip(corr.reshape(x.shape), clip[0], clip[1])


# ---------------------------------------------------------------------------
# Training (solved weights differentiated through)
# ---------------------------------------------------------------------------

def projection_loss(model: BaselineCNN, degraded: torch.Tensor,
                    source: torch.Tensor) -> torch.Tensor:
    """Negative explained error energy, summed over the batch.

    Equal to the total squared fitting error minus the constant sum |d_i|^2,
    so minimizing it maximizes what the solved combination can cancel.
    """
    channels = model(degraded)
    b, m, h, w = channels.shape
    r = channels.reshape(b, m, h * w).transpose(1, 2)
    d = (source - degraded).reshape(b, h * w, 1)
    gram = r.transpose(1, 2) @ r
    ridge = 1e-6 * torch.diagonal(gram, dim1=1, dim2=2).sum(-1) / m + 1e-12
    gram = gram + ridge[:, None, None] * torch.eye(m, dtype=gram.dtype)[None]
    rhs = r.transpose(1, 2) @ d
    a = torch.linalg.solve(gram, rhs)
    return -(rhs * a).sum()


def guided_train(
    model: BaselineCNN,
    pairs: tuple[np.ndarray, np.ndarray],
    steps: int,
    seed: int,
    batch_size: int = 16,
    lr: float = 1e-4,
    lr_halve_epochs: int = 20,
    start_step: int = 0,
    optimizer_state: dict | None = None,
) -> tuple[list[dict], dict]:
    """Train the backbone on (source, degraded) patch stacks.

    The per-block solve is inside the loss, so the backbone learns channels
    that span the coding error; the learning rate halves every
    ``lr_halve_epochs`` passes over the data.  Seeded per step; returns
    (per-step records, resume state).
    """
    sources, degradeds = pairs
    if len(sources) == 0 or len(sources) != len(degradeds):
        raise ValueError("need equal-length, non-empty source/degraded stacks")
    src = torch.from_numpy(np.asarray(sources, dtype=np.float32))
    deg = torch.from_numpy(np.asarray(degradeds, dtype=np.float32))
    if src.dim() == 3:
        src, deg = src[:, None], deg[:, None]
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    steps_per_epoch = max(1, len(src) // batch_size)
    history = []
    for step in range(start_step, steps):
        epoch = step // steps_per_epoch
        for group in opt.param_groups:
            group["lr"] = halve_every(lr, epoch, lr_halve_epochs)
        rng = step_rng(seed, step)
        idx = torch.from_numpy(
            rng.integers(0, len(src), size=min(batch_size, len(src))).astype(np.int64)
        )
        loss = projection_loss(model, deg[idx], src[idx])
        check_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "loss": float(loss.detach()),
                        "lr": opt.param_groups[0]["lr"]})
    return history, {"step": max(steps, start_step), "optimizer": opt.state_dict()}


# ---------------------------------------------------------------------------
# QP-range model bank
# ---------------------------------------------------------------------------

class QPRangeModel:
    """Six QP intervals, one trained backbone per interval."""

    def __init__(self, models: dict[int, BaselineCNN] | None = None):
        self.models: dict[int, BaselineCNN] = models or {}

    @staticmethod
    def range_index(qp: int) -> int:
        if not 0 <= qp <= 63:
            raise FormatError(f"qp must lie in [0, 63], got {qp}")
        for i, (lo, hi) in enumerate(QP_RANGES):
            if lo <= qp <= hi:
                return i
        raise AssertionError("QP ranges must partition [0, 63]")

    def model_for(self, qp: int) -> BaselineCNN:
        i = self.range_index(qp)
        if i not in self.models:
            raise FormatError(f"no trained model for QP range {QP_RANGES[i]}")
        return self.models[i]

    def set_model(self, qp_range_index: int, model: BaselineCNN) -> None:
        self.models[qp_range_index] = model

    def save(self, path) -> int:
        arrays = {}
        for i, m in self.models.items():
            arrays.update(state_dict_to_arrays(m.state_dict(), prefix=f"range{i}/"))
        config = {"kind": "guided", "ranges": sorted(self.models)}
        save_archive(path, arrays, config)
        return model_identity(arrays)

    @classmethod
    def load(cls, path) -> "QPRangeModel":
        arrays, config = load_archive(path)
        if config.get("kind") != "guided":
            raise DecodeError(f"{path}: not a guided-filter checkpoint")
        bank = cls()
        for i in config["ranges"]:
            m = BaselineCNN()
            m.load_state_dict(arrays_to_state_dict(arrays, prefix=f"range{i}/"))
            bank.models[i] = m
        return bank


# ---------------------------------------------------------------------------
# Frame-level filtering with signaled weights
# ---------------------------------------------------------------------------

def _block_starts(extent: int, block: int) -> list[int]:
    return list(range(0, extent, block))


class _BitPacker:
    def __init__(self):
        self.data = bytearray()
        self.acc = 0
        self.n = 0

    def put(self, value: int, bits: int):
        self.acc = (self.acc << bits) | (value & ((1 << bits) - 1))
        self.n += bits
        while self.n >= 8:
            self.n -= 8
            self.data.append((self.acc >> self.n) & 0xFF)

    def finish(self) -> bytes:
        if self.n:
            self.data.append((self.acc << (8 - self.n)) & 0xFF)
            self.acc = 0
            self.n = 0
        return bytes(self.data)


class _BitUnpacker:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.acc = 0
        self.n = 0

    def get(self, bits: int) -> int:
        while self.n < bits:
            if self.pos >= len(self.data):
                raise DecodeError("guided-weight payload exhausted")
            self.acc = (self.acc << 8) | self.data[self.pos]
            self.pos += 1
            self.n += 8
        self.n -= bits
        return (self.acc >> self.n) & ((1 << bits) - 1)


def pack_weight_payload(codes: np.ndarray, block: int, blocks_x: int,
                        blocks_y: int) -> bytes:
    """Geometry echo + row-major 11-bit coefficient codes, byte aligned."""
    header = struct.pack(">HHHB", block, blocks_x, blocks_y, M_CHANNELS)
    packer = _BitPacker()
    offset = _WEIGHT_LEVELS // 2
    for v in np.asarray(codes, dtype=np.int64).reshape(-1):
        packer.put(int(v) + offset, WEIGHT_BITS)
    return header + packer.finish()


def unpack_weight_payload(payload: bytes) -> tuple[np.ndarray, int, int, int]:
    if len(payload) < 7:
        raise DecodeError("guided-weight payload shorter than its header")
    block, blocks_x, blocks_y, m = struct.unpack(">HHHB", payload[:7])
    if m != M_CHANNELS:
        raise DecodeError(f"guided payload carries {m} channels, expected {M_CHANNELS}")
    unpacker = _BitUnpacker(payload[7:])
    offset = _WEIGHT_LEVELS // 2
    n = blocks_x * blocks_y * m
    codes = np.asarray([unpacker.get(WEIGHT_BITS) - offset for _ in range(n)],
                       dtype=np.int64)
    return codes.reshape(blocks_y, blocks_x, m), block, blocks_x, blocks_y


@torch.no_grad()
def _backbone_channels(model: BaselineCNN, luma: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(luma.astype(np.float32))[None, None]
    return model(x)[0].numpy().astype(np.float64)


@torch.no_grad()
def filter_frame(
    frame: Frame,
    qp: int,
    models: QPRangeModel,
    source: Frame | None = None,
    block: int = DEFAULT_BLOCK,
) -> tuple[Frame, bytes]:
    """Encoder-side filtering: solve, signal, and apply per-block weights.

    ``source`` supplies the original samples the error is measured against;
    without it every block falls back to zero weights (which are still
    signaled, keeping the payload layout identical).  Only luma is filtered;
    chroma passes through.
    """
    model = models.model_for(qp)
    peak = frame.max_value
    luma = frame.planes[0].astype(np.float64) / peak
    channels = _backbone_channels(model, luma)
    ys = _block_starts(frame.height, block)
    xs = _block_starts(frame.width, block)
    codes = np.zeros((len(ys), len(xs), M_CHANNELS), dtype=np.int64)
    if source is not None:
        if not source.same_geometry(frame):
            raise FormatError("source frame geometry differs from reconstruction")
        src = source.planes[0].astype(np.float64) / peak
        d_full = src - luma
        for by, y0 in enumerate(ys):
            for bx, x0 in enumerate(xs):
                sl = (slice(y0, min(y0 + block, frame.height)),
                      slice(x0, min(x0 + block, frame.width)))
                r = channels[:, sl[0], sl[1]].reshape(M_CHANNELS, -1).T
                d = d_full[sl].reshape(-1)
                cand = quantize_weights(solve_weights(r, d))
                # clamping to the signal range can land worse than zero
                # weights when channels are strongly correlated; keep the
                # candidate only if it beats the zero-weight fallback
                err_cand = float(np.sum((d - r @ dequantize_weights(cand)) ** 2))
                if err_cand < float(d @ d):
                    codes[by, bx] = cand
    payload = pack_weight_payload(codes, block, len(xs), len(ys))
    filtered = _apply_codes(frame, channels, codes, block)
    return filtered, payload


@torch.no_grad()
def apply_filter_payload(frame: Frame, qp: int, models: QPRangeModel,
                         payload: bytes) -> Frame:
    """Decoder-side filtering from a signaled weight payload."""
    model = models.model_for(qp)
    luma = frame.planes[0].astype(np.float64) / frame.max_value
    channels = _backbone_channels(model, luma)
    codes, block, blocks_x, blocks_y = unpack_weight_payload(payload)
    if blocks_y != len(_block_starts(frame.height, block)) or \
       blocks_x != len(_block_starts(frame.width, block)):
        raise DecodeError("guided payload block grid does not match frame")
    return _apply_codes(frame, channels, codes, block)


def _apply_codes(frame: Frame, channels: np.ndarray, codes: np.ndarray,
                 block: int) -> Frame:
    peak = frame.max_value
    luma = frame.planes[0].astype(np.float64) / peak
    out = luma.copy()
    for by, y0 in enumerate(_block_starts(frame.height, block)):
        for bx, x0 in enumerate(_block_starts(frame.width, block)):
            sl = (slice(y0, min(y0 + block, frame.height)),
                  slice(x0, min(x0 + block, frame.width)))
            a = dequantize_weights(codes[by, bx])
            r = channels[:, sl[0], sl[1]].reshape(M_CHANNELS, -1).T
            out[sl] = apply_correction(luma[sl], r, a).reshape(out[sl].shape)
    dtype = frame.planes[0].dtype
    new_luma = np.round(out * peak).astype(dtype)
    planes = (new_luma,) + tuple(p.copy() for p in frame.planes[1:])
    return Frame(planes=planes, bit_depth=frame.bit_depth, colorspace=frame.colorspace)
