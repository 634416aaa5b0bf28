"""Gray-level image I/O and speckle-noise synthesis.

Images are plain 2D ``float64`` numpy arrays with nominal range [0, 255].
Use :func:`as_image` to validate anything that comes from outside.
"""

from __future__ import annotations

import errno
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import optimize, special

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])

_WRITE_FORMATS = {".png": "PNG", ".pgm": "PPM"}


class UnsupportedFormatError(ValueError):
    """Raised for image files or extensions this package does not handle."""


class DegenerateInputError(ValueError):
    """Raised when an input makes an operation mathematically impossible."""


def as_image(data, *, copy: bool = False) -> np.ndarray:
    """Validate ``data`` as a gray image and return it as a float64 array."""
    arr = np.array(data, dtype=np.float64, copy=copy or None)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("image has a zero dimension")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains NaN or Inf")
    return arr


def read_image(path) -> np.ndarray:
    """Read an 8-bit grayscale PGM (P5) or PNG file.

    Color PNGs are converted to luma with the BT.601 weights. Anything with
    more than 8 bits per sample is rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(errno.ENOENT, "no such file", str(path))
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:  # PIL raises a zoo of exception types here
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    if img.format not in ("PNG", "PPM"):
        raise UnsupportedFormatError(f"{path}: format {img.format} is not PGM/PNG")
    if img.format == "PPM" and img.mode != "L":
        raise UnsupportedFormatError(f"{path}: only 8-bit P5 PGM is supported")

    mode = img.mode
    if mode == "P":
        img = img.convert("RGBA" if "transparency" in img.info else "RGB")
        mode = img.mode
    if mode in ("L", "LA"):
        data = np.asarray(img, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., 0]
    elif mode in ("RGB", "RGBA"):
        rgb = np.asarray(img, dtype=np.float64)[..., :3]
        data = rgb @ _LUMA
    elif mode == "1":
        data = np.asarray(img, dtype=np.float64) * 255.0
    else:
        raise UnsupportedFormatError(f"{path}: unsupported pixel mode {mode!r}")

    if data.shape[0] == 0 or data.shape[1] == 0:
        raise ValueError(f"{path}: zero-dimension image")
    return as_image(data)


def quantize(img) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero to ``uint8``."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 255.0)
    return np.floor(arr + 0.5).astype(np.uint8)


def write_image(img, path) -> None:
    """Write ``img`` as 8-bit PGM or PNG, chosen by the file extension."""
    path = Path(path)
    fmt = _WRITE_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise UnsupportedFormatError(f"{path}: cannot write extension {path.suffix!r}")
    Image.fromarray(quantize(as_image(img)), mode="L").save(path, format=fmt)


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of the multiplicative speckle model.

    ``sigma2_target`` is the *effective additive* variance in squared gray
    levels, i.e. the intended value of ``mean((u0 - u)**2)``.
    """

    sigma2_target: float
    seed: int = 0
    model: str = "multiplicative-gaussian"

    def __post_init__(self):
        if self.model != "multiplicative-gaussian":
            raise ValueError(f"unknown noise model {self.model!r}")
        if not (self.sigma2_target > 0 and math.isfinite(self.sigma2_target)):
            raise ValueError("sigma2_target must be a positive finite number")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


def noise_generator(seed: int) -> np.random.Generator:
    """Return the Philox-4x64 counter-based generator used for all noise."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _clipped_error_power(u: np.ndarray, sd: float) -> float:
    """Mean of E[(clip(u*(1+sd*Z), 0, 255) - u)^2] over pixels, Z ~ N(0, 1)."""
    scale = u * sd
    lo = -u  # error floor from clipping at 0
    hi = 255.0 - u
    live = scale > 0
    out = np.zeros_like(u)
    s = scale[live]
    a = lo[live] / s
    b = hi[live] / s
    pa, pb = special.ndtr(a), special.ndtr(b)
    fa = np.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    fb = np.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
    # truncated second moment of Z on (a, b)
    inner = (pb - pa) - (b * fb - a * fa)
    out[live] = s * s * inner + lo[live] ** 2 * pa + hi[live] ** 2 * (1.0 - pb)
    return float(out.mean())


def speckle_multiplier_sd(img, sigma2_target: float) -> float:
    """Standard deviation of the multiplier ``eta`` that hits ``sigma2_target``.

    Starts from ``sqrt(sigma2_target / mean(u**2))`` (the unclipped answer)
    and corrects for the loss of variance caused by clamping to [0, 255].
    """
    u = np.clip(as_image(img), 0.0, 255.0)
    power = float(np.mean(u * u))
    if power == 0.0:
        raise DegenerateInputError(
            "multiplicative noise cannot perturb an all-zero image"
        )
    sd0 = math.sqrt(sigma2_target / power)
    # ceiling as sd -> inf: each pixel saturates at 0 or 255 with prob 1/2
    ceiling = float(np.mean(0.5 * (u * u + (255.0 - u) ** 2) * (u > 0)))
    if sigma2_target >= ceiling * (1 - 1e-9):
        raise DegenerateInputError(
            f"sigma2_target={sigma2_target} unreachable after clamping "
            f"(limit {ceiling:.1f} for this image)"
        )
    if _clipped_error_power(u, sd0) >= sigma2_target:
        return sd0
    hi = sd0 * 2.0
    while _clipped_error_power(u, hi) < sigma2_target:
        hi *= 2.0
    return optimize.brentq(
        lambda sd: _clipped_error_power(u, sd) - sigma2_target, sd0, hi, xtol=1e-12
    )


def add_speckle(img, spec: NoiseSpec) -> np.ndarray:
    """Return ``clip(u * (1 + eta), 0, 255)`` with Gaussian ``eta``.

    The spread of ``eta`` is calibrated on ``img`` so that the expected
    squared error of the clamped result equals ``spec.sigma2_target``.
    Deterministic for a given seed.
    """
    u = as_image(img)
    sd = speckle_multiplier_sd(u, spec.sigma2_target)
    eta = noise_generator(spec.seed).standard_normal(u.shape)
    return np.clip(u * (1.0 + sd * eta), 0.0, 255.0)


def normalized_level_to_target(level: float, img) -> float:
    """Map a normalized speckle variance quoted on the 8-bit scale to an
    effective additive variance for ``img``.

    A multiplier of variance ``level / 255**2`` applied to ``u`` adds
    ``level * mean(u**2) / 255**2`` squared gray levels of error on average.
    """
    u = as_image(img)
    return float(level) * float(np.mean(u * u)) / 255.0**2
