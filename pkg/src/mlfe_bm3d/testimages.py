"""Synthetic test images and lookup of user-supplied standard images.

The classic 512x512 Lena and Baboon images are not distributed with the
package. Drop them (8-bit grayscale PNG or PGM, named ``lena.png`` /
``baboon.png`` or ``.pgm``) into the directory named by ``MLFE_BM3D_DATA``,
or into ``~/.cache/mlfe_bm3d``; :func:`find_standard` picks them up.
The synthetic generators are deterministic and need no files.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image import read_image

DATA_ENV = "MLFE_BM3D_DATA"
STANDARD_NAMES = ("lena", "baboon")


def data_dirs() -> list[Path]:
    dirs = []
    if os.environ.get(DATA_ENV):
        dirs.append(Path(os.environ[DATA_ENV]))
    dirs.append(Path.home() / ".cache" / "mlfe_bm3d")
    return dirs


def find_standard(name: str) -> Path | None:
    """Path of a user-supplied standard image, or None when absent."""
    for d in data_dirs():
        for ext in (".png", ".pgm"):
            p = d / f"{name}{ext}"
            if p.is_file():
                return p
    return None


def piecewise_constant(size: int = 256) -> np.ndarray:
    """Flat regions only: a few rectangles and discs on a mid-gray ground."""
    img = np.full((size, size), 110.0)
    s = size / 256.0
    yy, xx = np.mgrid[0:size, 0:size] / s
    img[(yy > 20) & (yy < 110) & (xx > 24) & (xx < 120)] = 60.0
    img[(yy > 140) & (yy < 236) & (xx > 30) & (xx < 100)] = 180.0
    img[(yy - 70) ** 2 + (xx - 185) ** 2 < 45**2] = 200.0
    img[(yy - 185) ** 2 + (xx - 175) ** 2 < 35**2] = 80.0
    img[(yy > 165) & (yy < 205) & (xx > 150) & (xx < 200)] = 140.0
    return img


def texture(size: int = 256, seed: int = 7) -> np.ndarray:
    """Oriented gratings plus band-limited random texture, range ~[20, 235]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    g = (np.sin(2 * np.pi * (0.11 * xx + 0.04 * yy))
         + 0.7 * np.sin(2 * np.pi * (0.03 * xx - 0.09 * yy)))
    rng = np.random.Generator(np.random.Philox(seed))
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.5)
    noise /= noise.std()
    t = g + 0.8 * noise
    t = (t - t.min()) / (t.max() - t.min())
    return 20.0 + 215.0 * t


def mixed(size: int = 256, seed: int = 7) -> np.ndarray:
    """Left half piecewise constant, right half textured."""
    img = piecewise_constant(size)
    half = size // 2
    img[:, half:] = texture(size, seed)[:, half:]
    return img


SYNTHETIC = {
    "piecewise": piecewise_constant,
    "texture": texture,
    "mixed": mixed,
}


def load(name: str) -> np.ndarray:
    """Resolve ``name`` as a synthetic generator, standard image or file path."""
    if name in SYNTHETIC:
        return SYNTHETIC[name]()
    if name in STANDARD_NAMES:
        path = find_standard(name)
        if path is None:
            raise FileNotFoundError(
                f"{name} not found; put {name}.png in ${DATA_ENV} or ~/.cache/mlfe_bm3d"
            )
        return read_image(path)
    return read_image(name)
