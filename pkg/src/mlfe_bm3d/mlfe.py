"""Multi-layer fusion enhancement around BM3D.

Pipeline for a speckled image ``u_0``:

1. ``u_R  = algorithm1(u_0)``          pyramid hard threshold + layer-3 gain
2. ``u_on = bm3d_basic(u_0)``, ``u_oR = bm3d_basic(u_R)``
3. ``u_F  = algorithm2(u_on, u_oR)``   signed geometric-mean fusion per layer,
   range re-adjustment, mid-band gains
4. final Wiener stage on ``u_0`` with ``u_F`` as grouping image and pilot
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bm3d import Bm3dProfile, ImageTooSmallError, bm3d_basic, bm3d_final
from .image import as_image, write_image
from .nsp import (
    PyramidStack,
    ThresholdPolicy,
    algorithm1,
    estimate_sigma,
    finest_noise_gain,
    min_size,
    nsp_decompose,
    nsp_reconstruct,
)

DEFAULT_GAINS = (1.0, 2.0, 2.0, 1.0)
FINAL_MODES = ("pilot", "full")


def fuse_geometric(c_n, c_R) -> np.ndarray:
    """``sgn(c_n) * sqrt(|c_n * c_R|)``, elementwise."""
    a = np.asarray(c_n, dtype=np.float64)
    b = np.asarray(c_R, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"coefficient planes differ: {a.shape} vs {b.shape}")
    # separate roots keep tiny products from underflowing to zero
    return np.sign(a) * np.sqrt(np.abs(a)) * np.sqrt(np.abs(b))


def rescale_range(c_f, c_n) -> np.ndarray:
    """Affinely map the range of ``c_f`` onto the range of ``c_n``.

    A constant ``c_f`` maps to the midpoint of ``c_n``'s range.
    """
    f = np.asarray(c_f, dtype=np.float64)
    n = np.asarray(c_n, dtype=np.float64)
    if f.shape != n.shape:
        raise ValueError(f"coefficient planes differ: {f.shape} vs {n.shape}")
    f_lo, f_hi = float(f.min()), float(f.max())
    n_lo, n_hi = float(n.min()), float(n.max())
    if f_hi == f_lo:
        return np.full_like(f, 0.5 * (n_lo + n_hi))
    return (f - f_lo) / (f_hi - f_lo) * (n_hi - n_lo) + n_lo


@dataclass(frozen=True)
class FusionStacks:
    c_n: PyramidStack
    c_R: PyramidStack
    c_f: PyramidStack
    c_F_adjusted: PyramidStack
    c_F: PyramidStack

    def __post_init__(self):
        stacks = (self.c_n, self.c_R, self.c_f, self.c_F_adjusted, self.c_F)
        if len({(s.shape, s.levels) for s in stacks}) != 1:
            raise ValueError("fusion stacks disagree in geometry")


def enhance_fused(stacks: FusionStacks | PyramidStack, gains=DEFAULT_GAINS) -> PyramidStack:
    """Multiply each range-adjusted layer by its gain."""
    base = stacks.c_F_adjusted if isinstance(stacks, FusionStacks) else stacks
    gains = tuple(gains)
    if len(gains) != base.levels:
        raise ValueError(f"need {base.levels} gains, got {len(gains)}")
    return base.with_layers(g * c for g, c in zip(gains, base.layers))


def fusion_stacks(u_on, u_oR, gains=DEFAULT_GAINS, levels: int = 4,
                  filters="cdf97") -> FusionStacks:
    c_n = nsp_decompose(u_on, levels, filters)
    c_R = nsp_decompose(u_oR, levels, filters)
    if c_n.shape != c_R.shape:
        raise ValueError("u_on and u_oR differ in size")
    fused = [fuse_geometric(a, b) for a, b in zip(c_n.layers, c_R.layers)]
    c_f = c_n.with_layers(fused)
    adjusted = c_n.with_layers(rescale_range(f, a) for f, a in zip(fused, c_n.layers))
    enhanced = enhance_fused(adjusted, gains)
    # u_on's lowpass residual rides through untouched
    return FusionStacks(c_n, c_R, c_f, adjusted, enhanced)


def algorithm2(u_on, u_oR, config: MlfeConfig | None = None) -> np.ndarray:
    """Fuse two basic estimates in the pyramid domain and reconstruct ``u_F``."""
    config = config or MlfeConfig()
    stacks = fusion_stacks(u_on, u_oR, config.fusion_gains, config.policy.levels,
                           config.policy.filters)
    return nsp_reconstruct(stacks.c_F)


@dataclass(frozen=True)
class MlfeConfig:
    """Everything the pipeline needs besides the image.

    ``sigma=None`` estimates the noise level from the finest pyramid layer
    of ``u_0``. ``final_mode="full"`` runs both BM3D stages on ``u_F``
    instead of using it as the Wiener pilot.
    """

    sigma: float | None = None
    policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    basic: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    fusion_gains: tuple = DEFAULT_GAINS
    final_mode: str = "pilot"
    workers: int = 1

    def __post_init__(self):
        if len(self.fusion_gains) != self.policy.levels:
            raise ValueError("one fusion gain per pyramid layer is required")
        if self.final_mode not in FINAL_MODES:
            raise ValueError(f"final_mode must be one of {FINAL_MODES}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def profiles(self, sigma: float) -> tuple[Bm3dProfile, Bm3dProfile]:
        return Bm3dProfile.basic(sigma, **self.basic), Bm3dProfile.final(sigma, **self.final)


def estimate_noise_sd(u_0, policy: ThresholdPolicy | None = None) -> float:
    """Image-domain noise sd from the MAD of the finest pyramid layer."""
    policy = policy or ThresholdPolicy()
    stack = nsp_decompose(u_0, policy.levels, policy.filters, policy.boundary)
    return estimate_sigma(stack.layers[-1]) / finest_noise_gain(policy.filters)


def check_size(shape, config: MlfeConfig) -> None:
    block = Bm3dProfile.basic(1.0, **config.basic).block
    need = max(block, min_size(config.policy.levels, config.policy.filters))
    if min(shape) < need:
        raise ImageTooSmallError(f"image {shape} too small for MLFE-BM3D (need >= {need})")


def mlfe_bm3d(u_0, config: MlfeConfig | None = None, stages: dict | None = None) -> np.ndarray:
    """Denoise ``u_0`` with the fused-pilot BM3D pipeline.

    Pass a dict as ``stages`` to receive the intermediate images
    (``u_R``, ``u_on``, ``u_oR``, ``u_F``) and the sigma used.
    """
    config = config or MlfeConfig()
    u0 = as_image(u_0)
    check_size(u0.shape, config)
    sigma = config.sigma if config.sigma is not None else estimate_noise_sd(u0, config.policy)
    if not (sigma > 0 and math.isfinite(sigma)):
        # a noiseless flat image has nothing to estimate from
        sigma = 1e-3
    basic, final = config.profiles(sigma)

    u_R = algorithm1(u0, config.policy)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            f_on = pool.submit(bm3d_basic, u0, basic)
            f_oR = pool.submit(bm3d_basic, u_R, basic)
            u_on, u_oR = f_on.result(), f_oR.result()
    else:
        u_on = bm3d_basic(u0, basic)
        u_oR = bm3d_basic(u_R, basic)
    u_F = algorithm2(u_on, u_oR, config)

    if config.final_mode == "pilot":
        out = bm3d_final(u0, u_F, final)
    else:
        out = bm3d_final(u_F, bm3d_basic(u_F, basic), final)

    if stages is not None:
        stages.update(u_R=u_R, u_on=u_on, u_oR=u_oR, u_F=u_F, sigma=sigma)
    return out


def dump_stages(stages: dict, directory, fmt: str = "png") -> Path:
    """Write intermediate images plus ``stages.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in ("u_R", "u_on", "u_oR", "u_F"):
        if name in stages:
            fname = f"{name}.{fmt}"
            write_image(stages[name], directory / fname)
            files[name] = fname
    manifest = {"files": files, "sigma": stages.get("sigma")}
    path = directory / "stages.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
