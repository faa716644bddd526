"""Sweep the lambda grid, build R-D curves, and compare codecs by BD-rate.

Trains one small intra model per rate point, codes a test set at each point,
then reports the Bjontegaard delta-rate of a (here, artificially rate-scaled)
competitor and writes the R-D plot as deterministic SVG.

Run:  python3 demos/05_rd_curves.py        (~5 minutes on CPU)
CLI equivalent: `nvclab encode --records ...` x4, then `nvclab eval / plot`
"""

from pathlib import Path

import numpy as np

from nvclab.cli import LAMBDA_GRID, _plot_curves
from nvclab.intra import new_intra_codec, train_intra
from nvclab.metrics import RDPoint, bd_rate, ms_ssim, psnr
from nvclab.synthetic import array_to_frame, patch_dataset, texture
from nvclab.vae import EngineConfig

cfg = EngineConfig(in_channels=1, stage_channels=(8, 12, 16, 16), latent_channels=8,
                   hyper_channels=8, hyper_feature_channels=8, residual_blocks=1)
patches = patch_dataset(400, 64, seed=11)
test_frames = [array_to_frame(texture(k, 64, seed=900 + i))
               for i, k in enumerate(("noise", "blobs", "noise", "blobs"))]

print(f"== sweeping lambda grid {LAMBDA_GRID} ==")
points_psnr, points_ssim = [], []
for idx, lam in enumerate(LAMBDA_GRID):
    model = new_intra_codec(cfg, lam=lam, lambda_index=idx, seed=21)
    train_intra(model, patches, steps=2000, seed=22, batch_size=8)
    bits = 0
    ps, ss = [], []
    for frame in test_frames:
        payload, _, recon, _ = model.encode_frame(frame)
        bits += 8 * len(payload)
        ps.append(psnr(frame, recon))
        ss.append(ms_ssim(frame, recon))
    bpp = bits / (64 * 64 * len(test_frames))
    points_psnr.append(RDPoint(bpp, float(np.mean(ps)), "psnr"))
    points_ssim.append(RDPoint(bpp, float(np.mean(ss)), "ms_ssim"))
    print(f"  lambda={lam:6.0f}: {bpp:.4f} bpp, {np.mean(ps):5.2f} dB, "
          f"MS-SSIM {np.mean(ss):.4f}")

# stand-in competitor: the same quality ladder at 12% more rate everywhere
rival_psnr = [RDPoint(p.rate * 1.12, p.distortion, "psnr") for p in points_psnr]
rival_ssim = [RDPoint(p.rate * 1.12, p.distortion, "ms_ssim") for p in points_ssim]

print("\n== BD-rate vs the rate-inflated rival ==")
print(f"  PSNR axis:    {bd_rate(rival_psnr, points_psnr):+.2f}%")
print(f"  MS-SSIM axis: {bd_rate(rival_ssim, points_ssim):+.2f}%")

out = Path("demos/out")
out.mkdir(exist_ok=True)
curves = {
    "this codec": {"psnr": points_psnr, "ms_ssim": points_ssim},
    "rival": {"psnr": rival_psnr, "ms_ssim": rival_ssim},
}
_plot_curves(curves, out / "rd_curves.svg")
print(f"\nplot written to {out / 'rd_curves.svg'}")
