"""Shared fixtures.

The trained-model fixtures are session-scoped because desk-scale training is
the expensive part of the suite; module tests and the acceptance suite share
one training run each.
"""

import numpy as np
import pytest
import torch

from nvclab.guided import BaselineCNN, guided_train
from nvclab.inter import InterCodec, InterTrainSchedule, new_inter_codec, train_inter
from nvclab.intra import IntraCodec, new_intra_codec, train_intra
from nvclab.postfilter import new_warn, train_warn
from nvclab.synthetic import (
    degrade,
    patch_dataset,
    static_clip,
    texture,
    translating_clip,
)
from nvclab.vae import EngineConfig

TINY = dict(stage_channels=(8, 12, 16, 16), latent_channels=8, hyper_channels=8,
            hyper_feature_channels=8, residual_blocks=1)

# the motion path needs a roomier bottleneck to generalize displacement
MOTION_TINY = dict(stage_channels=(8, 12, 16, 16), latent_channels=16,
                   hyper_channels=8, hyper_feature_channels=8, residual_blocks=1)


@pytest.fixture(scope="session")
def tiny_cfg() -> EngineConfig:
    return EngineConfig(in_channels=1, **TINY)


@pytest.fixture(scope="session")
def untrained_intra(tiny_cfg) -> IntraCodec:
    return new_intra_codec(tiny_cfg, lam=256.0, seed=11)


@pytest.fixture(scope="session")
def untrained_inter() -> InterCodec:
    return new_inter_codec(
        1, seed=12,
        motion_cfg=EngineConfig(in_channels=2, **TINY),
        residual_cfg=EngineConfig(in_channels=1, **TINY),
        temporal_channels=4,
    )


@pytest.fixture(scope="session")
def intra_patches() -> np.ndarray:
    return patch_dataset(1000, 64, seed=100)


@pytest.fixture(scope="session")
def trained_intra(tiny_cfg, intra_patches):
    """Rate-distortion training run; per-step history rides along.

    The first 500 history entries double as the fixed-seed 500-step training
    probe (per-step seeding makes the prefix identical to a 500-step run).
    """
    model = new_intra_codec(tiny_cfg, lam=256.0, seed=21)
    history, _ = train_intra(model, intra_patches, steps=2500, seed=22, batch_size=8)
    model.eval()
    return model, history


@pytest.fixture(scope="session")
def rd_model_pair(tiny_cfg, intra_patches):
    """Low- and high-lambda models trained identically for R-D comparisons."""
    models = {}
    for lam, idx in ((32.0, 0), (2048.0, 3)):
        m = new_intra_codec(tiny_cfg, lam=lam, lambda_index=idx, seed=21)
        history, _ = train_intra(m, intra_patches, steps=3000, seed=22, batch_size=8)
        m.eval()
        models[lam] = (m, history)
    return models


def make_training_clips(count: int, seed: int, frames: int = 3) -> list[np.ndarray]:
    """Mixed static and translating toy clips over four texture families."""
    clips = []
    rng = np.random.default_rng(seed)
    for i in range(count):
        kind = ("noise", "checker", "blobs", "ramp")[i % 4]
        base = texture(kind, 64, seed=int(rng.integers(1 << 31)))
        if i % 4 == 0:
            seq = static_clip(base, frames)
        else:
            dy, dx = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
            seq = translating_clip(base, frames, shift=(dy, dx))
        clips.append(
            np.stack([f.planes[0] / f.max_value for f in seq.frames]).astype(np.float32)
        )
    return clips


@pytest.fixture(scope="session")
def inter_clips() -> list[np.ndarray]:
    return make_training_clips(300, 200)


@pytest.fixture(scope="session")
def trained_inter(inter_clips):
    """Staged motion/residual/joint training; per-stage histories ride along."""
    model = new_inter_codec(
        1, seed=31,
        motion_cfg=EngineConfig(in_channels=2, **MOTION_TINY),
        residual_cfg=EngineConfig(in_channels=1, **TINY),
        temporal_channels=4,
    )
    schedule = InterTrainSchedule(motion_steps=4000, residual_steps=1500,
                                  joint_steps=1500, batch_size=6)
    history, _ = train_inter(model, inter_clips, schedule, seed=32)
    model.eval()
    return model, history


@pytest.fixture(scope="session")
def guided_training_data():
    src = patch_dataset(300, 64, seed=300)
    deg = np.stack([degrade(s, seed=i, blur=1.2, noise=0.0) for i, s in enumerate(src)])
    return src, deg


@pytest.fixture(scope="session")
def trained_guided(guided_training_data):
    """200-step guided backbone run plus fixed-set losses before/after."""
    from nvclab.guided import projection_loss

    src, deg = guided_training_data
    torch.manual_seed(41)
    model = BaselineCNN()
    s_t = torch.from_numpy(src[:128, None])
    d_t = torch.from_numpy(deg[:128, None])
    with torch.no_grad():
        initial = float(projection_loss(model, d_t, s_t))
    history, _ = guided_train(model, (src, deg), steps=200, seed=42, batch_size=16)
    with torch.no_grad():
        final = float(projection_loss(model, d_t, s_t))
    model.eval()
    return model, history, initial, final


@pytest.fixture(scope="session")
def enhancement_data():
    """(clean, lf_degraded, hf_prev, hf_next) stacks for matched SVE/MVE runs.

    Flat patches are excluded: blurring changes nothing on them, which makes
    restoration gains undefined.
    """
    rng = np.random.default_rng(500)
    clean = patch_dataset(160, 64, seed=501,
                          kinds=("noise", "checker", "blobs", "ramp"))
    lf, h0, h1 = [], [], []
    for s in clean:
        lf.append(degrade(s, seed=int(rng.integers(1 << 31)), blur=1.6, noise=0.0))
        h0.append(degrade(s, seed=int(rng.integers(1 << 31)), blur=0.4, noise=0.0))
        h1.append(degrade(s, seed=int(rng.integers(1 << 31)), blur=0.4, noise=0.0))
    return clean, np.stack(lf), np.stack(h0), np.stack(h1)


@pytest.fixture(scope="session")
def trained_warn_pair(enhancement_data):
    """SVE and MVE fusion models trained with matched budgets and seeds."""
    clean, lf, h0, h1 = enhancement_data
    steps = 300
    sve = new_warn(1, seed=51, width=16, blocks=4)
    _, _ = train_warn(sve, lf[:, None], clean, steps=steps, seed=52, batch_size=8)
    mve = new_warn(3, seed=51, width=16, blocks=4)
    stacked = np.stack([lf, h0, h1], axis=1)
    _, _ = train_warn(mve, stacked, clean, steps=steps, seed=52, batch_size=8)
    sve.eval()
    mve.eval()
    return sve, mve
