"""Nonsubsampled (a trous) pyramid with one direction per scale.

Each level splits the current lowpass plane ``x`` into

    low    = H0 * x                     (analysis lowpass, dilated)
    detail = x - G0 * low               (equivalently (1 - G0 H0) * x)

and synthesis is ``x = G0 * low + detail``. Reconstruction is therefore
exact for any lowpass pair; the pair only shapes the frequency split.
Filters at level ``j`` are dilated by ``2**(j-1)`` (zeros inserted).

Bandpass layers are stored coarse to fine: ``layers[0]`` is the deepest
(lowest frequency) detail plane, ``layers[-1]`` the finest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image import as_image, write_image

# CDF 9/7 lowpass filters, normalized to unit DC gain.
CDF97_ANALYSIS = np.array([
    0.026748757410810, -0.016864118442875, -0.078223266528990,
    0.266864118442875, 0.602949018236360, 0.266864118442875,
    -0.078223266528990, -0.016864118442875, 0.026748757410810,
])
CDF97_SYNTHESIS = np.array([
    -0.045635881557125, -0.028771763114250, 0.295635881557125,
    0.557543526228500, 0.295635881557125, -0.028771763114250,
    -0.045635881557125,
])
# B3-spline kernel of the classical starlet transform; synthesis is the identity.
B3_SPLINE = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

FILTER_PAIRS = {
    "cdf97": (CDF97_ANALYSIS, CDF97_SYNTHESIS),
    "starlet": (B3_SPLINE, np.array([1.0])),
}

BOUNDARY_MODES = {"symmetric": "reflect", "periodic": "wrap"}

DEFAULT_LEVELS = 4
MIN_LEVELS, MAX_LEVELS = 2, 6


def _normalize_pair(filters):
    if isinstance(filters, str):
        try:
            filters = FILTER_PAIRS[filters]
        except KeyError:
            raise ValueError(f"unknown filter pair {filters!r}") from None
    lo, syn = (np.asarray(f, dtype=np.float64) for f in filters)
    for f in (lo, syn):
        if f.ndim != 1 or len(f) % 2 == 0:
            raise ValueError("pyramid filters must be 1D with odd length")
    return lo, syn


def dilate(taps: np.ndarray, level: int) -> np.ndarray:
    """Insert ``2**(level-1) - 1`` zeros between consecutive taps."""
    step = 2 ** (level - 1)
    if step == 1:
        return taps
    out = np.zeros((len(taps) - 1) * step + 1)
    out[::step] = taps
    return out


def _smooth(x: np.ndarray, taps: np.ndarray, mode: str) -> np.ndarray:
    if len(taps) == 1:
        return x * taps[0]
    y = ndimage.correlate1d(x, taps, axis=0, mode=mode)
    return ndimage.correlate1d(y, taps, axis=1, mode=mode)


def min_size(levels: int, filters="cdf97") -> int:
    """Smallest image side the pyramid accepts for ``levels`` levels."""
    lo, syn = _normalize_pair(filters)
    half = max(len(lo), len(syn)) // 2
    return half * 2 ** (levels - 1) + 1


@dataclass(frozen=True)
class PyramidStack:
    """Bandpass layers (coarse to fine) plus the lowpass residual."""

    layers: tuple
    lowpass: np.ndarray
    filters: str = "cdf97"
    boundary: str = "symmetric"

    def __post_init__(self):
        shape = self.lowpass.shape
        if any(np.shape(layer) != shape for layer in self.layers):
            raise ValueError("all pyramid planes must share the lowpass shape")

    @property
    def levels(self) -> int:
        return len(self.layers)

    @property
    def shape(self) -> tuple:
        return self.lowpass.shape

    def with_layers(self, layers) -> PyramidStack:
        return replace(self, layers=tuple(layers))

    def scaled(self, factor: float) -> PyramidStack:
        return replace(
            self,
            layers=tuple(factor * c for c in self.layers),
            lowpass=factor * self.lowpass,
        )


def nsp_decompose(img, levels: int = DEFAULT_LEVELS, filters="cdf97",
                  boundary: str = "symmetric") -> PyramidStack:
    """Split ``img`` into ``levels`` undecimated bandpass planes and a lowpass."""
    x = as_image(img)
    if not MIN_LEVELS <= levels <= MAX_LEVELS:
        raise ValueError(f"levels must be in [{MIN_LEVELS}, {MAX_LEVELS}]")
    mode = BOUNDARY_MODES[boundary]
    lo, syn = _normalize_pair(filters)
    need = min_size(levels, (lo, syn))
    if min(x.shape) < need:
        raise ValueError(
            f"image {x.shape} too small for a {levels}-level pyramid (need >= {need})"
        )
    details = []
    for level in range(1, levels + 1):
        low = _smooth(x, dilate(lo, level), mode)
        details.append(x - _smooth(low, dilate(syn, level), mode))
        x = low
    name = filters if isinstance(filters, str) else "custom"
    return PyramidStack(tuple(reversed(details)), x, name, boundary)


def nsp_reconstruct(stack: PyramidStack, filters=None) -> np.ndarray:
    """Invert :func:`nsp_decompose`; linear in the stack's planes."""
    lo, syn = _normalize_pair(filters if filters is not None else stack.filters)
    mode = BOUNDARY_MODES[stack.boundary]
    x = np.asarray(stack.lowpass, dtype=np.float64)
    # layers run coarse -> fine, so the deepest level comes first
    for level, detail in zip(range(stack.levels, 0, -1), stack.layers):
        if np.shape(detail) != x.shape:
            raise ValueError("pyramid plane dimensions disagree")
        x = _smooth(x, dilate(syn, level), mode) + detail
    return x


def finest_noise_gain(filters="cdf97") -> float:
    """L2 norm of the finest-level equivalent highpass ``delta - G0 H0``.

    Dividing a MAD estimate of the finest layer by this gain gives the
    image-domain standard deviation of white noise.
    """
    lo, syn = _normalize_pair(filters)
    smooth = np.convolve(lo, syn)
    taps = -np.outer(smooth, smooth)
    c = len(smooth) // 2
    taps[c, c] += 1.0
    return float(np.sqrt(np.sum(taps**2)))


def estimate_sigma(layer) -> float:
    """Robust noise standard deviation: ``median(|c|) / 0.6745``."""
    c = np.asarray(layer, dtype=np.float64)
    if c.size == 0:
        raise ValueError("cannot estimate noise on an empty plane")
    return float(np.median(np.abs(c)) / 0.6745)


def hard_threshold(layer, threshold: float) -> np.ndarray:
    """Zero every coefficient with ``|c| < threshold``; keep ``|c| >= threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    c = np.asarray(layer, dtype=np.float64)
    return np.where(np.abs(c) >= threshold, c, 0.0)


def scale_layer(stack: PyramidStack, index: int, gain: float) -> PyramidStack:
    """Multiply bandpass layer ``index`` (1-based, coarse to fine) by ``gain``."""
    if not 1 <= index <= stack.levels:
        raise IndexError(f"layer index {index} outside 1..{stack.levels}")
    layers = list(stack.layers)
    layers[index - 1] = layers[index - 1] * gain
    return stack.with_layers(layers)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Per-layer K multipliers for K-sigma hard thresholding (coarse to fine).

    The finest layer gets the largest K since it carries most of the noise.
    """

    k: tuple = (3.0, 3.0, 3.0, 4.0)
    enhance_layer: int = 3
    enhance_gain: float = 2.0
    levels: int = DEFAULT_LEVELS
    filters: str = "cdf97"
    boundary: str = "symmetric"
    estimator: str = field(default="mad", repr=False)

    def __post_init__(self):
        if len(self.k) != self.levels:
            raise ValueError(f"need one K per layer ({self.levels}), got {len(self.k)}")
        if any(k <= 0 for k in self.k):
            raise ValueError("K values must be positive")
        if self.estimator != "mad":
            raise ValueError("only the MAD estimator is supported")
        if self.filters not in FILTER_PAIRS:
            raise ValueError(f"unknown filter pair {self.filters!r}")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {tuple(BOUNDARY_MODES)}")
        if not MIN_LEVELS <= self.levels <= MAX_LEVELS:
            raise ValueError(f"levels must be in [{MIN_LEVELS}, {MAX_LEVELS}]")
        if self.enhance_layer and not 1 <= self.enhance_layer <= self.levels:
            raise ValueError(f"enhance_layer must be 0 (off) or in 1..{self.levels}")


def algorithm1(u_0, policy: ThresholdPolicy | None = None) -> np.ndarray:
    """Pyramid K-sigma hard thresholding followed by mid-band amplification.

    Each bandpass layer is thresholded at ``K * MAD(layer)``; the lowpass
    residual is left alone. Layer ``policy.enhance_layer`` is then
    multiplied by ``policy.enhance_gain`` before reconstruction.
    """
    policy = policy or ThresholdPolicy()
    stack = nsp_decompose(u_0, policy.levels, policy.filters, policy.boundary)
    layers = [
        hard_threshold(c, k * estimate_sigma(c)) for c, k in zip(stack.layers, policy.k)
    ]
    stack = stack.with_layers(layers)
    if policy.enhance_layer:
        stack = scale_layer(stack, policy.enhance_layer, policy.enhance_gain)
    return nsp_reconstruct(stack)


def dump_stack(stack: PyramidStack, directory) -> Path:
    """Write every plane as an 8-bit PGM plus a ``manifest.json``.

    Bandpass planes are shifted by +128 so zero maps to mid-gray; values are
    clamped on write, so the dump is for inspection only.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, layer in enumerate(stack.layers, start=1):
        name = f"layer{i}.pgm"
        write_image(layer + 128.0, directory / name)
        entries.append({"file": name, "index": i, "offset": 128.0,
                        "min": float(layer.min()), "max": float(layer.max())})
    write_image(stack.lowpass, directory / "lowpass.pgm")
    manifest = {
        "height": stack.shape[0],
        "width": stack.shape[1],
        "ordering": "coarse-to-fine",
        "filters": stack.filters,
        "boundary": stack.boundary,
        "layers": entries,
        "lowpass": {"file": "lowpass.pgm", "offset": 0.0},
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
