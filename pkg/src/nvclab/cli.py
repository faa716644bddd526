"""Command-line operator surface.

Commands: ``train-intra``, ``train-inter``, ``train-guided``, ``train-warn``,
``encode``, ``decode``, ``enhance``, ``eval``, ``plot``.

Every command is deterministic under a fixed ``--seed`` and fixed inputs.
A flat ``key = value`` config file can seed any long option (dashes become
underscores); explicit flags override file values.  Relative checkpoint and
output paths resolve under ``$NVCLAB_HOME`` when that variable is set.

Exit codes: 0 success, 2 usage, 3 I/O or malformed data, 4 model mismatch or
wrong checkpoint kind, 5 numeric divergence during training.

Dataset specifiers accepted by the ``--data`` flags:

    synthetic:patches:COUNT[:SIZE[:SEED]]    texture patch stack
    synthetic:clips:COUNT[:FRAMES[:SIZE[:SEED]]]  translating/static clips
    PATH                                     a .y4m file or a PNG directory
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    DecodeError,
    DomainError,
    FormatError,
    ModelMismatchError,
    ParseError,
    ScheduleError,
    TrainingDiverged,
)

LAMBDA_GRID = (32.0, 128.0, 512.0, 2048.0)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MODEL = 4
EXIT_DIVERGED = 5


def _resolve(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    root = os.environ.get("NVCLAB_HOME")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` pairs; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------

def load_patch_data(spec: str, patch_size: int = 64) -> np.ndarray:
    from .media import extract_patches, load_video
    from .synthetic import patch_dataset

    if spec.startswith("synthetic:patches:"):
        parts = spec.split(":")[2:]
        count = int(parts[0])
        size = int(parts[1]) if len(parts) > 1 else patch_size
        seed = int(parts[2]) if len(parts) > 2 else 0
        return patch_dataset(count, size, seed=seed)
    seq = load_video(_resolve(spec))
    patches = []
    for frame in seq.frames:
        patches.extend(extract_patches(frame, patch_size, patch_size))
    if not patches:
        raise FormatError(f"{spec}: no patches extracted")
    return np.stack(patches)


def load_clip_data(spec: str) -> list[np.ndarray]:
    from .media import load_video
    from .synthetic import texture, translating_clip

    if spec.startswith("synthetic:clips:"):
        parts = spec.split(":")[2:]
        count = int(parts[0])
        frames = int(parts[1]) if len(parts) > 1 else 4
        size = int(parts[2]) if len(parts) > 2 else 64
        seed = int(parts[3]) if len(parts) > 3 else 0
        rng = np.random.default_rng(seed)
        clips = []
        for i in range(count):
            base = texture(("noise", "checker", "blobs")[i % 3], size,
                           seed=int(rng.integers(1 << 31)))
            dy, dx = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
            seq = translating_clip(base, frames, shift=(dy, dx))
            clips.append(np.stack([f.planes[0] / f.max_value for f in seq.frames])
                         .astype(np.float32))
        return clips
    seq = load_video(_resolve(spec))
    clip = np.stack([f.to_normalized()[0] for f in seq.frames]).astype(np.float32)
    return [clip]


# ---------------------------------------------------------------------------
# shared loss-log / summary helpers
# ---------------------------------------------------------------------------

def write_loss_log(path: Path | None, records: list[dict]) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _sequence_records(source, decoded, stream) -> list[str]:
    from .metrics import frame_record, ms_ssim, psnr

    lines = []
    total_bits = 0
    psnrs, ssims = [], []
    for i, (a, b) in enumerate(zip(source.frames, decoded.frames)):
        bits = stream.frames[i].payload_bits
        total_bits += bits
        p = psnr(a, b)
        s = ms_ssim(a, b)
        psnrs.append(p)
        ssims.append(s)
        lines.append(frame_record(i, bits, p, s,
                                  frame_type="I" if stream.frames[i].frame_type == 0 else "P"))
    n = len(source.frames)
    bpp = total_bits / (source.width * source.height * n)
    finite = [p for p in psnrs if np.isfinite(p)]
    summary = {
        "summary": True,
        "frames": n,
        "width": source.width,
        "height": source.height,
        "total_bits": total_bits,
        "bpp": bpp,
        "psnr_mean": round(float(np.mean(finite)) if finite else float("inf"), 4),
        "ms_ssim_mean": round(float(np.mean(ssims)), 6),
    }
    lines.append(json.dumps(summary, sort_keys=True))
    return lines


# ---------------------------------------------------------------------------
# train commands
# ---------------------------------------------------------------------------

def _engine_config(args, in_channels: int = 1):
    from .vae import EngineConfig

    widths = tuple(int(w) for w in args.stage_channels.split(","))
    return EngineConfig(
        in_channels=in_channels,
        stage_channels=widths,
        latent_channels=args.latent_channels,
        hyper_channels=args.hyper_channels,
        hyper_feature_channels=args.hyper_features,
        residual_blocks=args.residual_blocks,
        attention=not args.no_attention,
    )


def _lambda_from(args) -> tuple[float, int]:
    if args.lam is not None:
        return float(args.lam), int(args.lambda_index)
    idx = int(args.lambda_index)
    if not 0 <= idx < len(LAMBDA_GRID):
        raise FormatError(f"lambda index {idx} outside grid of {len(LAMBDA_GRID)}")
    return LAMBDA_GRID[idx], idx


def cmd_train_intra(args) -> int:
    import torch

    from .checkpoint import load_archive, save_archive
    from .intra import IntraCodec, new_intra_codec, train_intra

    patches = load_patch_data(args.data, args.patch_size)
    if len(patches) == 0:
        raise FormatError("empty dataset")
    lam, lam_idx = _lambda_from(args)
    start_step = 0
    opt_state = None
    if args.resume:
        model = IntraCodec.load(_resolve(args.resume))
        _, config = load_archive(_resolve(args.resume))
        train_state = config.get("train_state", {})
        start_step = train_state.get("step", 0)
        opt_path = _resolve(args.resume).with_suffix(".opt")
        if opt_path.exists():
            opt_state = torch.load(opt_path, weights_only=False)
    else:
        model = new_intra_codec(_engine_config(args), lam=lam, lambda_index=lam_idx,
                                seed=args.seed, distortion=args.distortion)
    history, state = train_intra(
        model, patches, steps=args.steps, seed=args.seed,
        batch_size=args.batch_size, lr=args.lr,
        start_step=start_step, optimizer_state=opt_state,
    )
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    from .checkpoint import model_identity, state_dict_to_arrays

    arrays = state_dict_to_arrays(model.state_dict())
    config = model.config_echo()
    config["train_state"] = {"step": state["step"], "seed": args.seed}
    save_archive(out, arrays, config)
    torch.save(state["optimizer"], out.with_suffix(".opt"))
    write_loss_log(_resolve(args.loss_log), history)
    final = history[-1]["loss"] if history else float("nan")
    print(f"trained intra model: {args.steps - start_step} steps, "
          f"final loss {final:.6f}, id {model_identity(arrays):#010x}")
    print(f"checkpoint: {out}")
    return 0


def cmd_train_inter(args) -> int:
    import torch

    from .checkpoint import load_archive, model_identity, save_archive, state_dict_to_arrays
    from .inter import InterCodec, InterTrainSchedule, new_inter_codec, train_inter
    from .vae import EngineConfig

    clips = load_clip_data(args.data)
    lam, lam_idx = _lambda_from(args)
    resume_state = None
    if args.resume:
        model = InterCodec.load(_resolve(args.resume))
        _, config = load_archive(_resolve(args.resume))
        resume_state = config.get("train_state") or None
        if resume_state:
            opt_path = _resolve(args.resume).with_suffix(".opt")
            if opt_path.exists():
                resume_state["optimizer"] = torch.load(opt_path, weights_only=False)
    else:
        base = _engine_config(args)
        motion_cfg = EngineConfig(**{**base.to_dict(), "in_channels": 2})
        residual_cfg = EngineConfig(**{**base.to_dict(), "in_channels": 1})
        model = new_inter_codec(
            1, seed=args.seed, motion_cfg=motion_cfg, residual_cfg=residual_cfg,
            temporal_channels=args.temporal_channels, lam=lam, lambda_index=lam_idx,
        )
    schedule = InterTrainSchedule(
        motion_steps=args.motion_steps, residual_steps=args.residual_steps,
        joint_steps=args.joint_steps, lr=args.lr, batch_size=args.batch_size,
    )
    history, state = train_inter(model, clips, schedule, seed=args.seed,
                                 resume=resume_state)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    arrays = state_dict_to_arrays(model.state_dict())
    config = model.config_echo()
    config["train_state"] = {"stage": state["stage"], "step": state["step"],
                             "seed": args.seed}
    save_archive(out, arrays, config)
    torch.save(state["optimizer"], out.with_suffix(".opt"))
    flat = [rec for stage in ("motion", "residual", "joint") for rec in history[stage]]
    write_loss_log(_resolve(args.loss_log), flat)
    print(f"trained inter model through stage {state['stage']}, "
          f"id {model_identity(arrays):#010x}")
    print(f"checkpoint: {out}")
    return 0


def cmd_train_guided(args) -> int:
    import torch

    from .checkpoint import load_archive
    from .guided import BaselineCNN, QPRangeModel, guided_train
    from .synthetic import degrade

    src = load_patch_data(args.data, args.patch_size)
    rng = np.random.default_rng(args.seed)
    deg = np.stack([
        degrade(s, seed=int(rng.integers(1 << 31)), blur=args.blur, noise=args.noise)
        for s in src
    ])
    start_step = 0
    opt_state = None
    if args.resume:
        bank = QPRangeModel.load(_resolve(args.resume))
        model = bank.models[args.qp_range]
        _, config = load_archive(_resolve(args.resume))
        start_step = config.get("train_state", {}).get("step", 0)
        opt_path = _resolve(args.resume).with_suffix(".opt")
        if opt_path.exists():
            opt_state = torch.load(opt_path, weights_only=False)
    else:
        torch.manual_seed(args.seed)
        bank = QPRangeModel()
        model = BaselineCNN()
    history, state = guided_train(
        model, (src, deg), steps=args.steps, seed=args.seed,
        batch_size=args.batch_size, lr=args.lr,
        start_step=start_step, optimizer_state=opt_state,
    )
    ranges = ([args.qp_range] if not args.all_ranges
              else list(range(6)))
    for i in ranges:
        bank.set_model(i, model)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mid = bank.save(out)
    torch.save(state["optimizer"], out.with_suffix(".opt"))
    write_loss_log(_resolve(args.loss_log), history)
    final = history[-1]["loss"] if history else float("nan")
    print(f"trained guided filter ranges {ranges}: final loss {final:.6f}, id {mid:#010x}")
    print(f"checkpoint: {out}")
    return 0


def cmd_train_warn(args) -> int:
    import torch

    from .checkpoint import load_archive
    from .postfilter import WARNModel, new_warn, train_warn
    from .synthetic import degrade

    clean = load_patch_data(args.data, args.patch_size)
    rng = np.random.default_rng(args.seed)
    if args.arity == 1:
        inputs = np.stack([
            degrade(s, seed=int(rng.integers(1 << 31)), blur=args.blur, noise=args.noise)
            for s in clean
        ])[:, None]
    else:
        # target channel degraded hard, companions mildly (stand-ins for HFs)
        rows = []
        for s in clean:
            lf = degrade(s, seed=int(rng.integers(1 << 31)), blur=args.blur,
                         noise=args.noise)
            h0 = degrade(s, seed=int(rng.integers(1 << 31)), blur=args.blur / 3,
                         noise=args.noise / 3)
            h1 = degrade(s, seed=int(rng.integers(1 << 31)), blur=args.blur / 3,
                         noise=args.noise / 3)
            rows.append(np.stack([lf, h0, h1]))
        inputs = np.stack(rows)
    start_step = 0
    opt_state = None
    if args.resume:
        model = WARNModel.load(_resolve(args.resume))
        _, config = load_archive(_resolve(args.resume))
        start_step = config.get("train_state", {}).get("step", 0)
        opt_path = _resolve(args.resume).with_suffix(".opt")
        if opt_path.exists():
            opt_state = torch.load(opt_path, weights_only=False)
    else:
        model = new_warn(args.arity, seed=args.seed, width=args.width,
                         blocks=args.blocks)
    history, state = train_warn(
        model, inputs, clean, steps=args.steps, seed=args.seed,
        batch_size=args.batch_size, lr=args.lr,
        start_step=start_step, optimizer_state=opt_state,
    )
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mid = model.save(out)
    torch.save(state["optimizer"], out.with_suffix(".opt"))
    write_loss_log(_resolve(args.loss_log), history)
    final = history[-1]["loss"] if history else float("nan")
    print(f"trained arity-{args.arity} enhancement model: final loss {final:.6f}, "
          f"id {mid:#010x}")
    print(f"checkpoint: {out}")
    return 0


# ---------------------------------------------------------------------------
# codec commands
# ---------------------------------------------------------------------------

def _load_models(args):
    from .guided import QPRangeModel
    from .inter import InterCodec
    from .intra import IntraCodec

    intra_path = _resolve(args.intra)
    if not intra_path.exists():
        raise FileNotFoundError(f"intra checkpoint not found: {intra_path}")
    intra = IntraCodec.load(intra_path)
    inter = None
    if getattr(args, "inter", None):
        inter_path = _resolve(args.inter)
        if not inter_path.exists():
            raise FileNotFoundError(f"inter checkpoint not found: {inter_path}")
        inter = InterCodec.load(inter_path)
    guided = None
    if getattr(args, "guided", None):
        guided_path = _resolve(args.guided)
        if not guided_path.exists():
            raise FileNotFoundError(f"guided checkpoint not found: {guided_path}")
        guided = QPRangeModel.load(guided_path)
    return intra, inter, guided


def cmd_encode(args) -> int:
    from .inter import encode_gop
    from .media import load_video

    intra, inter, guided = _load_models(args)
    seq = load_video(_resolve(args.input))
    stream, recons = encode_gop(
        seq, intra, inter, gop_size=args.gop, seed_base=args.seed_base,
        guided=guided, guided_qp=args.qp, guided_block=args.block,
    )
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(stream.to_bytes())
    from .media import VideoSequence

    recon_seq = VideoSequence(frames=recons, fps=seq.fps, gop_size=stream.header.gop_size)
    lines = _sequence_records(seq, recon_seq, stream)
    if args.records:
        rec_path = _resolve(args.records)
        rec_path.parent.mkdir(parents=True, exist_ok=True)
        rec_path.write_text("\n".join(lines) + "\n")
    print(lines[-1])
    print(f"bitstream: {out} ({len(stream.to_bytes())} bytes)")
    return 0


def cmd_decode(args) -> int:
    from .bitstream import Bitstream
    from .inter import decode_gop
    from .media import save_video

    intra, inter, guided = _load_models(args)
    data = _resolve(args.input).read_bytes()
    stream = Bitstream.from_bytes(data)
    seq = decode_gop(stream, intra, inter, guided=guided, guided_qp=args.qp)
    out = _resolve(args.out)
    if out.suffix.lower() != ".y4m":
        out.mkdir(parents=True, exist_ok=True)
    save_video(seq, out)
    print(f"decoded {len(seq)} frames to {out}")
    return 0


def cmd_enhance(args) -> int:
    from .media import load_video, save_video
    from .postfilter import WARNModel, enhance_sequence

    seq = load_video(_resolve(args.input))
    sve = WARNModel.load(_resolve(args.sve))
    mve = WARNModel.load(_resolve(args.mve))
    qps = _parse_qps(args.qps, len(seq))
    out_seq = enhance_sequence(seq, qps, args.base_qp, sve, mve)
    out = _resolve(args.out)
    if out.suffix.lower() != ".y4m":
        out.mkdir(parents=True, exist_ok=True)
    save_video(out_seq, out)
    anchors = sum(1 for q in qps if q < args.base_qp)
    print(f"enhanced {len(seq)} frames ({anchors} anchors)")
    return 0


def _parse_qps(spec: str, n: int) -> list[int]:
    if spec.startswith("hier:"):
        _, period, hf_qp, lf_qp = spec.split(":")
        period, hf_qp, lf_qp = int(period), int(hf_qp), int(lf_qp)
        return [hf_qp if i % period == 0 else lf_qp for i in range(n)]
    qps = [int(tok) for tok in spec.split(",")]
    if len(qps) != n:
        raise FormatError(f"{len(qps)} QPs for {n} frames")
    return qps


# ---------------------------------------------------------------------------
# eval / plot
# ---------------------------------------------------------------------------

def _read_curves(specs: list[str]):
    from .metrics import RDPoint

    curves = {}
    for spec in specs:
        if "=" not in spec:
            raise FormatError(f"curve spec {spec!r} must be name=path[,path...]")
        name, paths = spec.split("=", 1)
        pts_psnr, pts_ssim = [], []
        for path in paths.split(","):
            summary = None
            for line in Path(_resolve(path)).read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("summary"):
                    summary = rec
            if summary is None:
                raise FormatError(f"{path}: no summary record found")
            pts_psnr.append(RDPoint(summary["bpp"], summary["psnr_mean"], "psnr"))
            pts_ssim.append(RDPoint(summary["bpp"], summary["ms_ssim_mean"], "ms_ssim"))
        curves[name] = {"psnr": pts_psnr, "ms_ssim": pts_ssim}
    return curves


def _plot_curves(curves, out: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "nvclab"
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for metric, ax in zip(("psnr", "ms_ssim"), axes):
        for name, pts in curves.items():
            p = sorted(pts[metric], key=lambda q: q.rate)
            ax.plot([q.rate for q in p], [q.distortion for q in p],
                    marker="o", label=name)
        ax.set_xlabel("bits per pixel")
        ax.set_ylabel("PSNR (dB)" if metric == "psnr" else "MS-SSIM")
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_eval(args) -> int:
    from .metrics import bd_rate

    curves = _read_curves(args.curve)
    if args.anchor not in curves:
        raise FormatError(f"anchor {args.anchor!r} not among curves "
                          f"{sorted(curves)}")
    rows = []
    for name, pts in curves.items():
        for metric in ("psnr", "ms_ssim"):
            value = bd_rate(curves[args.anchor][metric], pts[metric])
            rows.append((name, metric, value))
    table_lines = [f"{'method':<16} {'metric':<8} {'bd-rate vs ' + args.anchor:>16}"]
    for name, metric, value in rows:
        table_lines.append(f"{name:<16} {metric:<8} {value:>15.2f}%")
    table = "\n".join(table_lines)
    print(table)
    if args.table:
        tpath = _resolve(args.table)
        tpath.parent.mkdir(parents=True, exist_ok=True)
        tpath.write_text(table + "\n")
    if args.plot:
        _plot_curves(curves, _resolve(args.plot))
        print(f"plot: {_resolve(args.plot)}")
    return 0


def cmd_plot(args) -> int:
    curves = _read_curves(args.curve)
    _plot_curves(curves, _resolve(args.out))
    print(f"plot: {_resolve(args.out)}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stage-channels", default="32,32,32,32",
                   help="comma list of four stage widths")
    p.add_argument("--latent-channels", type=int, default=32)
    p.add_argument("--hyper-channels", type=int, default=32)
    p.add_argument("--hyper-features", type=int, default=16)
    p.add_argument("--residual-blocks", type=int, default=3)
    p.add_argument("--no-attention", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser, with_steps: bool = True) -> None:
    p.add_argument("--seed", type=int, required=True,
                   help="training seed (mandatory for reproducibility)")
    if with_steps:
        p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--loss-log", default=None, help="JSON-lines loss log path")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--data", required=True, help="dataset specifier")
    p.add_argument("--patch-size", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvclab",
        description="desk-scale neural video codec laboratory",
    )
    parser.add_argument("--config", default=None,
                        help="flat key=value config file; flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-intra", help="train an intra model at one rate point")
    _add_train_flags(p)
    _add_engine_flags(p)
    p.add_argument("--lam", type=float, default=None, help="explicit lambda")
    p.add_argument("--lambda-index", type=int, default=1,
                   help=f"index into the lambda grid {LAMBDA_GRID}")
    p.add_argument("--distortion", choices=("mse", "ms_ssim"), default="mse")
    p.set_defaults(func=cmd_train_intra)

    p = sub.add_parser("train-inter", help="staged motion/residual/joint training")
    _add_train_flags(p, with_steps=False)
    _add_engine_flags(p)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--lambda-index", type=int, default=1)
    p.add_argument("--temporal-channels", type=int, default=8)
    p.add_argument("--motion-steps", type=int, default=300)
    p.add_argument("--residual-steps", type=int, default=300)
    p.add_argument("--joint-steps", type=int, default=200)
    p.set_defaults(func=cmd_train_inter)

    p = sub.add_parser("train-guided", help="train the guided filter backbone")
    _add_train_flags(p)
    p.add_argument("--qp-range", type=int, default=2, help="QP range index 0..5")
    p.add_argument("--all-ranges", action="store_true",
                   help="install the trained backbone in all six ranges")
    p.add_argument("--blur", type=float, default=1.2)
    p.add_argument("--noise", type=float, default=0.01)
    p.set_defaults(func=cmd_train_guided)

    p = sub.add_parser("train-warn", help="train an enhancement fusion model")
    _add_train_flags(p)
    p.add_argument("--arity", type=int, choices=(1, 3), default=1)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--blur", type=float, default=1.2)
    p.add_argument("--noise", type=float, default=0.02)
    p.set_defaults(func=cmd_train_warn)

    p = sub.add_parser("encode", help="encode a video to a bitstream")
    p.add_argument("--input", required=True)
    p.add_argument("--intra", required=True, help="intra checkpoint")
    p.add_argument("--inter", default=None, help="inter checkpoint (else intra-only)")
    p.add_argument("--guided", default=None, help="guided filter checkpoint")
    p.add_argument("--qp", type=int, default=None, help="guided filter QP")
    p.add_argument("--block", type=int, default=256, help="guided filter block side")
    p.add_argument("--gop", type=int, default=None)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--records", default=None, help="per-frame metric records path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream to video")
    p.add_argument("--input", required=True)
    p.add_argument("--intra", required=True)
    p.add_argument("--inter", default=None)
    p.add_argument("--guided", default=None)
    p.add_argument("--qp", type=int, default=None)
    p.add_argument("--out", required=True, help=".y4m file or PNG directory")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("enhance", help="post-filter a decoded video")
    p.add_argument("--input", required=True)
    p.add_argument("--sve", required=True, help="arity-1 model checkpoint")
    p.add_argument("--mve", required=True, help="arity-3 model checkpoint")
    p.add_argument("--qps", required=True,
                   help="per-frame QPs: comma list or hier:PERIOD:HFQP:LFQP")
    p.add_argument("--base-qp", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="R-D table and BD-rate vs an anchor")
    p.add_argument("--curve", action="append", required=True,
                   help="name=records1,records2,... (repeatable)")
    p.add_argument("--anchor", required=True)
    p.add_argument("--table", default=None, help="write the table to this path")
    p.add_argument("--plot", default=None, help="write an SVG R-D plot")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="R-D curve plot from records")
    p.add_argument("--curve", action="append", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # pre-scan for --config so file values become overridable defaults;
    # options satisfied by the file stop being required on the command line
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        values = read_config_file(cfg_path)
        for action in parser._actions:  # noqa: SLF001
            if isinstance(action, argparse._SubParsersAction):  # noqa: SLF001
                for subparser in action.choices.values():
                    for sub_action in subparser._actions:  # noqa: SLF001
                        if sub_action.dest in values:
                            sub_action.default = values[sub_action.dest]
                            sub_action.required = False
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ModelMismatchError,) as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, FormatError, DecodeError, DomainError, ScheduleError,
            FileNotFoundError, NotADirectoryError, IsADirectoryError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
