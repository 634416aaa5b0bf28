"""Speckle denoising with BM3D and multi-layer pyramid fusion.

The main entry points are :func:`bm3d` (plain two-stage BM3D) and
:func:`mlfe_bm3d` (fused-pilot pipeline); :mod:`mlfe_bm3d.metrics` holds
the quality measures and :mod:`mlfe_bm3d.bench` the benchmark harness.
"""

from .bm3d import Bm3dProfile, ImageTooSmallError, bm3d, bm3d_basic, bm3d_final
from .image import (
    DegenerateInputError,
    NoiseSpec,
    UnsupportedFormatError,
    add_speckle,
    normalized_level_to_target,
    read_image,
    write_image,
)
from .metrics import mssim, psnr, quality_report, rmse, snr, ssim_map
from .mlfe import MlfeConfig, algorithm2, mlfe_bm3d
from .nsp import ThresholdPolicy, algorithm1, nsp_decompose, nsp_reconstruct

__version__ = "0.1.0"

__all__ = [
    "Bm3dProfile",
    "DegenerateInputError",
    "ImageTooSmallError",
    "MlfeConfig",
    "NoiseSpec",
    "ThresholdPolicy",
    "UnsupportedFormatError",
    "add_speckle",
    "algorithm1",
    "algorithm2",
    "bm3d",
    "bm3d_basic",
    "bm3d_final",
    "mlfe_bm3d",
    "mssim",
    "nsp_decompose",
    "nsp_reconstruct",
    "normalized_level_to_target",
    "psnr",
    "quality_report",
    "read_image",
    "rmse",
    "snr",
    "ssim_map",
    "write_image",
]
