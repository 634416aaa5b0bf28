"""Small separable block transforms used by the collaborative filters.

The 2D transforms act on square power-of-two blocks. Each has a matching
``*_matrix`` helper that returns the 1D operator as a dense matrix ``T``
such that the 2D transform of ``X`` is ``T @ X @ T.T``; the batched BM3D
kernels use those matrices.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import fft

_R2 = np.sqrt(2.0)

# bior1.5 decomposition filters, in the usual time order
BIOR15_DEC_LO = _R2 / 256.0 * np.array([3, -3, -22, 22, 128, 128, 22, -22, -3, 3], float)
BIOR15_DEC_HI = np.array([0, 0, 0, 0, -1, 1, 0, 0, 0, 0], float) / _R2
BIOR15_REC_LO = np.array([0, 0, 0, 0, 1, 1, 0, 0, 0, 0], float) / _R2
BIOR15_REC_HI = _R2 / 256.0 * np.array([3, 3, -22, -22, 128, -128, 22, 22, -3, -3], float)


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _check_block(block) -> np.ndarray:
    b = np.asarray(block, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != b.shape[1] or not _is_pow2(b.shape[0]):
        raise ValueError(f"expected a square power-of-two block, got shape {b.shape}")
    return b


def dct2d(block) -> np.ndarray:
    """Orthonormal separable DCT-II."""
    return fft.dctn(_check_block(block), type=2, norm="ortho")


def idct2d(coeffs) -> np.ndarray:
    return fft.idctn(_check_block(coeffs), type=2, norm="ortho")


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``C[k, i] = a_k cos(pi (2i+1) k / 2n)``."""
    i = np.arange(n)
    c = np.cos(np.pi * (2 * i[None, :] + 1) * i[:, None] / (2 * n)) * np.sqrt(2.0 / n)
    c[0] /= _R2
    c.setflags(write=False)
    return c


def _analysis_1d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One periodized bior1.5 analysis step along the last axis."""
    n = x.shape[-1]
    taps = len(BIOR15_DEC_LO)
    k = np.arange(n // 2)
    approx = np.zeros(x.shape[:-1] + (n // 2,))
    detail = np.zeros_like(approx)
    for t in range(taps):
        src = x[..., (2 * k + 1 - t) % n]
        approx += BIOR15_DEC_LO[t] * src
        detail += BIOR15_DEC_HI[t] * src
    return approx, detail


def _synthesis_1d(approx: np.ndarray, detail: np.ndarray) -> np.ndarray:
    """Inverse of :func:`_analysis_1d`."""
    half = approx.shape[-1]
    n = 2 * half
    taps = len(BIOR15_REC_LO)
    out = np.zeros(approx.shape[:-1] + (n,))
    k = np.arange(half)
    for t in range(taps):
        dst = (2 * k + t - (taps - 2)) % n
        # np.add.at: dst can repeat when the filter wraps more than once
        np.add.at(out, (..., dst), BIOR15_REC_LO[t] * approx + BIOR15_REC_HI[t] * detail)
    return out


def _dwt_1d(x: np.ndarray, levels: int) -> np.ndarray:
    out = np.array(x, dtype=np.float64)
    n = out.shape[-1]
    for _ in range(levels):
        a, d = _analysis_1d(out[..., :n])
        out[..., : n // 2] = a
        out[..., n // 2 : n] = d
        n //= 2
    return out


def _idwt_1d(c: np.ndarray, levels: int) -> np.ndarray:
    out = np.array(c, dtype=np.float64)
    n = out.shape[-1] >> (levels - 1)
    for _ in range(levels):
        out[..., :n] = _synthesis_1d(out[..., : n // 2], out[..., n // 2 : n])
        n *= 2
    return out


def _full_depth(n: int) -> int:
    return n.bit_length() - 1


def dwt2d_bior15(block) -> np.ndarray:
    """Full-depth separable bior1.5 analysis with periodic extension.

    Coefficients are laid out Mallat style; ``[0, 0]`` is the coarsest
    approximation (the block's DC term).
    """
    b = _check_block(block)
    levels = _full_depth(b.shape[0])
    return _dwt_1d(_dwt_1d(b, levels).T, levels).T


def idwt2d_bior15(coeffs) -> np.ndarray:
    c = _check_block(coeffs)
    levels = _full_depth(c.shape[0])
    return _idwt_1d(_idwt_1d(c.T, levels).T, levels)


@lru_cache(maxsize=None)
def bior15_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward and inverse 1D full-depth bior1.5 operators for length ``n``.

    Obtained by pushing the identity through the filter bank.
    """
    levels = _full_depth(n)
    eye = np.eye(n)
    fwd = _dwt_1d(eye, levels).T
    inv = _idwt_1d(eye, levels).T
    fwd.setflags(write=False)
    inv.setflags(write=False)
    return fwd, inv


def haar1d(v) -> np.ndarray:
    """Orthonormal full-depth Haar transform of a power-of-two length vector.

    Output order: overall average first, then details from coarse to fine.
    """
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1 or not _is_pow2(len(x)):
        raise ValueError(f"length {x.shape} is not a power of two")
    return haar_matrix(len(x)) @ x


def ihaar1d(c) -> np.ndarray:
    x = np.asarray(c, dtype=np.float64)
    if x.ndim != 1 or not _is_pow2(len(x)):
        raise ValueError(f"length {x.shape} is not a power of two")
    return haar_matrix(len(x)).T @ x


@lru_cache(maxsize=None)
def haar_matrix(n: int) -> np.ndarray:
    """Orthonormal Haar analysis matrix (rows are the basis vectors)."""
    if not _is_pow2(n):
        raise ValueError(f"{n} is not a power of two")
    h = np.ones((1, 1))
    while h.shape[0] < n:
        m = h.shape[0]
        top = np.kron(h, [1.0, 1.0])
        bottom = np.kron(np.eye(m), [1.0, -1.0])
        h = np.vstack([top, bottom]) / _R2
    h.setflags(write=False)
    return h


TRANSFORMS_2D = ("bior1.5", "dct")


def transform_pair(name: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(forward, inverse) 1D matrices for the named 2D block transform."""
    if name == "dct":
        c = dct_matrix(n)
        return c, c.T
    if name == "bior1.5":
        return bior15_matrices(n)
    raise ValueError(f"unknown 2D transform {name!r}; expected one of {TRANSFORMS_2D}")
