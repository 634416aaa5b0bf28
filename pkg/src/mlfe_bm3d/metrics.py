"""Full-reference quality metrics, SSIM maps and line profiles.

All metrics take ``(u_t, u)``: the image under test first, the clean
reference second. Identical images yield ``math.inf`` for SNR and PSNR.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .image import as_image

MAX_VALUE = 255.0
SSIM_WINDOW = 8
SSIM_GAUSSIAN_SD = 1.5
C1 = (0.01 * MAX_VALUE) ** 2
C2 = (0.03 * MAX_VALUE) ** 2
C3 = C2 / 2.0

MSSIM_CONVENTIONS = ("mean", "squared")
SNR_CONVENTIONS = ("variance", "power")
SSIM_WEIGHTINGS = ("gaussian", "uniform")


def _pair(u_t, u):
    a, b = as_image(u_t), as_image(u)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(u_t, u) -> float:
    a, b = _pair(u_t, u)
    return float(np.mean((a - b) ** 2))


def rmse(u_t, u) -> float:
    return math.sqrt(mse(u_t, u))


def psnr(u_t, u) -> float:
    """Peak SNR in dB for 8-bit data, using the per-pixel mean squared error."""
    err = mse(u_t, u)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(MAX_VALUE**2 / err)


def psnr_from_rmse(value: float) -> float:
    return math.inf if value == 0 else 20.0 * math.log10(MAX_VALUE / value)


def snr(u_t, u, convention: str = "variance") -> float:
    """Signal-to-error ratio in dB.

    With ``convention="variance"`` the signal term is the spread of ``u_t``
    about its own mean, so the metric is not symmetric in its arguments.
    ``"power"`` uses the raw energy of the reference ``u`` instead, which
    makes ``psnr - snr`` a constant of the reference image.
    """
    if convention not in SNR_CONVENTIONS:
        raise ValueError(f"convention must be one of {SNR_CONVENTIONS}")
    a, b = _pair(u_t, u)
    err = float(np.sum((a - b) ** 2))
    if err == 0.0:
        return math.inf
    if convention == "power":
        signal = float(np.sum(b * b))
    else:
        signal = float(np.sum((a - a.mean()) ** 2))
    if signal == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal / err)


def window_weights(window: int = SSIM_WINDOW, weighting: str = "gaussian",
                   sd: float = SSIM_GAUSSIAN_SD) -> np.ndarray:
    """1D weights of the separable SSIM window, summing to one."""
    if weighting == "uniform":
        w = np.ones(window)
    elif weighting == "gaussian":
        t = np.arange(window) - (window - 1) / 2.0
        w = np.exp(-0.5 * (t / sd) ** 2)
    else:
        raise ValueError(f"unknown window weighting {weighting!r}")
    return w / w.sum()


def _window_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted mean over every window fully inside ``x`` (valid region)."""
    k = len(w)
    y = sliding_window_view(x, k, axis=0) @ w
    return sliding_window_view(y, k, axis=1) @ w


def ssim_map(u_t, u, window: int = SSIM_WINDOW, weighting: str = "gaussian") -> np.ndarray:
    """SSIM index at every position of a ``window``-square sliding window.

    The result has shape ``(H - window + 1, W - window + 1)``. Local moments
    are weighted by a separable Gaussian (sd 1.5 px) or, with
    ``weighting="uniform"``, unweighted.
    """
    a, b = _pair(u_t, u)
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")
    w = window_weights(window, weighting)
    # centering keeps E[x^2] - E[x]^2 well conditioned
    offset = 0.5 * (a.mean() + b.mean())
    a = a - offset
    b = b - offset
    mu_a = _window_mean(a, w)
    mu_b = _window_mean(b, w)
    var_a = np.maximum(_window_mean(a * a, w) - mu_a**2, 0.0)
    var_b = np.maximum(_window_mean(b * b, w) - mu_b**2, 0.0)
    cov = _window_mean(a * b, w) - mu_a * mu_b
    mu_a += offset
    mu_b += offset
    sd_a, sd_b = np.sqrt(var_a), np.sqrt(var_b)

    luminance = (2 * mu_a * mu_b + C1) / (mu_a**2 + mu_b**2 + C1)
    contrast = (2 * sd_a * sd_b + C2) / (var_a + var_b + C2)
    structure = (cov + C3) / (sd_a * sd_b + C3)
    # rounding can push |cov| a hair past sd_a*sd_b
    return np.clip(luminance * contrast * structure, -1.0, 1.0)


def mssim(u_t, u, convention: str = "mean", weighting: str = "gaussian") -> float:
    """Scalar summary of :func:`ssim_map`.

    ``"mean"`` is the usual average of the map; ``"squared"`` averages the
    squared indices instead.
    """
    if convention not in MSSIM_CONVENTIONS:
        raise ValueError(f"convention must be one of {MSSIM_CONVENTIONS}")
    m = ssim_map(u_t, u, weighting=weighting)
    return float(np.mean(m**2) if convention == "squared" else np.mean(m))


@dataclass(frozen=True)
class QualityReport:
    snr: float
    psnr: float
    rmse: float
    mssim: float

    def as_row(self) -> dict:
        return {
            "snr_db": self.snr,
            "psnr_db": self.psnr,
            "rmse": self.rmse,
            "mssim": self.mssim,
        }


def quality_report(u_t, u, mssim_convention: str = "mean",
                   snr_convention: str = "variance",
                   ssim_weighting: str = "gaussian") -> QualityReport:
    a, b = _pair(u_t, u)
    r = rmse(a, b)
    return QualityReport(
        snr=snr(a, b, snr_convention),
        psnr=psnr_from_rmse(r),
        rmse=r,
        mssim=mssim(a, b, mssim_convention, ssim_weighting),
    )


def ssim_diff_map(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"SSIM map shapes differ: {a.shape} vs {b.shape}")
    return a - b


def render_ssim_map(m) -> np.ndarray:
    """Affine map of SSIM values from [-1, 1] onto [0, 255] gray levels."""
    return (np.asarray(m, dtype=np.float64) + 1.0) * 127.5


def decode_ssim_map(gray) -> np.ndarray:
    return np.asarray(gray, dtype=np.float64) / 127.5 - 1.0


def render_signed(diff, scale: float | None = None) -> np.ndarray:
    """Color-code a signed map: white at zero, red ramp up, blue ramp down.

    ``scale`` is the magnitude drawn at full saturation; it defaults to the
    largest absolute value in the map. Returns an ``(H, W, 3)`` uint8 array.
    """
    d = np.asarray(diff, dtype=np.float64)
    if scale is None:
        scale = float(np.max(np.abs(d))) if d.size else 0.0
    t = np.zeros_like(d) if scale <= 0 else np.clip(d / scale, -1.0, 1.0)
    fade = np.rint(255.0 * (1.0 - np.abs(t))).astype(np.uint8)
    rgb = np.full(d.shape + (3,), 255, dtype=np.uint8)
    pos, neg = t > 0, t < 0
    rgb[..., 1] = fade  # green fades on both sides
    rgb[..., 2][pos] = fade[pos]
    rgb[..., 0][neg] = fade[neg]
    return rgb


def write_signed_png(diff, path, scale: float | None = None) -> None:
    Image.fromarray(render_signed(diff, scale), mode="RGB").save(Path(path), format="PNG")


def bresenham(p0, p1) -> list[tuple[int, int]]:
    """Integer points on the segment from ``p0`` to ``p1`` (both ``(x, y)``)."""
    x0, y0 = map(int, p0)
    x1, y1 = map(int, p1)
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    points = []
    while True:
        points.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return points
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def line_profile(img, p0, p1) -> list[tuple[float, float]]:
    """Gray levels along the rasterized segment ``p0 -> p1``.

    Points are ``(x, y)`` = ``(column, row)``. Returns ``(distance from p0,
    intensity)`` pairs in traversal order.
    """
    u = as_image(img)
    h, w = u.shape
    for x, y in (p0, p1):
        if not (0 <= x < w and 0 <= y < h):
            raise IndexError(f"endpoint ({x}, {y}) outside {w}x{h} image")
    x0, y0 = p0
    return [
        (math.hypot(x - x0, y - y0), float(u[y, x])) for x, y in bresenham(p0, p1)
    ]


def write_profile_csv(img, p0, p1, path) -> int:
    u = as_image(img)
    points = bresenham(p0, p1)
    rows = line_profile(u, p0, p1)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["x", "y", "distance", "intensity"])
        for (x, y), (dist, value) in zip(points, rows):
            out.writerow([x, y, f"{dist:.6f}", f"{value:.6f}"])
    return len(rows)
