"""The guided filter: a 3,744-weight backbone plus two signaled numbers per block.

The backbone maps a degraded frame to two correction channels; for every
block the encoder solves a 2x2 least-squares system for the channel mix that
best cancels the error against the source, quantizes the two coefficients to
11 bits each, and signals them.  The decoder runs the same backbone and
applies the signaled mix, so adaptation costs ~3 bytes per 256x256 block
instead of a new network.

Run:  python3 demos/03_guided_filter.py        (~1 minute on CPU)
CLI equivalent: `nvclab train-guided ...`
"""

import numpy as np
import torch

from nvclab.guided import (
    BaselineCNN,
    QPRangeModel,
    apply_filter_payload,
    filter_frame,
    guided_train,
    solve_weights,
)
from nvclab.metrics import psnr
from nvclab.synthetic import array_to_frame, degrade, patch_dataset, texture

torch.manual_seed(0)
model = BaselineCNN()
print(f"backbone: {model.weight_parameter_count} weights, "
      f"{model.output_channels} correction channels")

print("\n== training (the least-squares solve sits inside the loss) ==")
clean = patch_dataset(300, 64, seed=1, kinds=("noise", "checker", "blobs", "ramp"))
degraded = np.stack([degrade(c, seed=i, blur=1.2, noise=0.0)
                     for i, c in enumerate(clean)])
history, _ = guided_train(model, (clean, degraded), steps=250, seed=2, batch_size=16)
print(f"fitting loss {history[0]['loss']:.4f} -> {history[-1]['loss']:.4f}")

print("\n== filtering a frame the model never saw ==")
src = array_to_frame(texture("noise", 200, seed=99))
deg = array_to_frame(degrade(src.planes[0] / 255.0, seed=100, blur=1.2, noise=0.0))
bank = QPRangeModel({i: model for i in range(6)})

filtered, payload = filter_frame(deg, qp=30, models=bank, source=src, block=64)
print(f"signaled weights: {len(payload)} bytes for a 200x200 frame "
      f"({4 * 4} blocks x 2 coefficients x 11 bits)")
print(f"PSNR before {psnr(src, deg):.2f} dB -> after {psnr(src, filtered):.2f} dB")

decoded = apply_filter_payload(deg, qp=30, models=bank, payload=payload)
print(f"decoder-side filtering identical: {decoded == filtered}")

# the per-block solve in isolation: when the error lies in the span of the
# correction channels, the fit is exact
rng = np.random.default_rng(3)
channels = rng.normal(size=(4096, 2))
error = channels @ np.array([2.5, -0.75])
print(f"\nexact-span solve: {solve_weights(channels, error).round(6)} "
      f"(true coefficients 2.5, -0.75)")
