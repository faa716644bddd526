"""Desk-scale trainable neural video compression laboratory.

Subsystems:

- :mod:`nvclab.media`      frame/sequence containers, y4m and PNG-dir I/O
- :mod:`nvclab.metrics`    PSNR, MS-SSIM, Bjontegaard rate deltas
- :mod:`nvclab.vae`        the shared compression autoencoder
- :mod:`nvclab.entropy`    context models, likelihoods, temporal priors
- :mod:`nvclab.rangecoder` integer arithmetic coding to real bytes
- :mod:`nvclab.bitstream`  the decodable container format
- :mod:`nvclab.intra`      intra codec and its training loop
- :mod:`nvclab.inter`      motion, compensation, residual, GoP pipeline
- :mod:`nvclab.guided`     guided CNN filter with signaled weights
- :mod:`nvclab.postfilter` single- and multi-frame enhancement
- :mod:`nvclab.cli`        command-line entry points
"""

from .media import Frame, VideoSequence, extract_patches, load_video, save_video
from .metrics import LOSSLESS, RDPoint, bd_rate, ms_ssim, psnr
from .vae import EngineConfig, universal_quantize

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "VideoSequence",
    "load_video",
    "save_video",
    "extract_patches",
    "RDPoint",
    "psnr",
    "ms_ssim",
    "bd_rate",
    "LOSSLESS",
    "EngineConfig",
    "universal_quantize",
    "__version__",
]
