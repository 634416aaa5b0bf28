"""Two-stage BM3D: grouping, collaborative filtering and aggregation.

Stage 1 (basic estimate) hard-thresholds each group in a 3D transform
domain; stage 2 (final estimate) applies an empirical Wiener filter whose
gains come from a pilot image. Groups are stored as ``(count, block,
block)`` volumes; the 3D transform is the profile's 2D block transform
followed by an orthonormal Haar transform along the group axis.

Reference blocks are processed in fixed-size chunks and accumulated in a
fixed order, so results do not depend on the numba thread count.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import as_image
from .transforms import TRANSFORMS_2D, haar_matrix, transform_pair

CHUNK = 4096

# numba probes TBB first and complains about old versions before falling back
warnings.filterwarnings("ignore", message="The TBB threading layer requires")


class ImageTooSmallError(ValueError):
    """The image cannot hold a single block or pyramid level."""


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class Bm3dProfile:
    """Parameters for one BM3D stage.

    ``match_threshold`` bounds the mean per-pixel squared difference between
    a candidate and the reference block. ``search_radius`` bounds the offset
    of a candidate's top-left corner from the reference's, per axis.
    """

    sigma: float
    block: int = 8
    step: int = 3
    search_radius: int = 19
    group_max: int = 16
    match_threshold: float = 2500.0
    lambda3d: float = 2.7
    transform2d: str = "bior1.5"
    window_beta: float = 2.0

    def __post_init__(self):
        if not (_is_pow2(self.block) and self.block >= 4):
            raise ValueError("block must be a power of two >= 4")
        if not _is_pow2(self.group_max):
            raise ValueError("group_max must be a power of two")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.step < 1 or self.step > self.block:
            raise ValueError("step must be in [1, block]")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")
        if self.match_threshold < 0 or self.lambda3d < 0:
            raise ValueError("thresholds must be non-negative")
        if self.transform2d not in TRANSFORMS_2D:
            raise ValueError(f"transform2d must be one of {TRANSFORMS_2D}")

    @classmethod
    def basic(cls, sigma: float, **overrides) -> Bm3dProfile:
        return cls(sigma=sigma, **overrides)

    @classmethod
    def final(cls, sigma: float, **overrides) -> Bm3dProfile:
        params = {"match_threshold": 400.0, "transform2d": "dct"}
        params.update(overrides)
        return cls(sigma=sigma, **params)

    def with_sigma(self, sigma: float) -> Bm3dProfile:
        return replace(self, sigma=float(sigma))

    def kaiser(self) -> np.ndarray:
        w = np.kaiser(self.block, self.window_beta)
        return np.outer(w, w)


@dataclass(frozen=True)
class BlockGroup:
    """Matched blocks for one reference; ``positions[0]`` is the reference."""

    reference: tuple
    positions: np.ndarray  # (count, 2) rows/cols of top-left corners
    distances: np.ndarray
    data: np.ndarray  # (count, block, block)

    @property
    def count(self) -> int:
        return len(self.positions)


# ---------------------------------------------------------------- matching


@numba.njit(cache=True, parallel=True)
def _match_kernel(img, refs, block, radius, thresh, cap, out_pos, out_dist, out_count):
    h, w = img.shape
    inv_area = 1.0 / (block * block)
    for g in numba.prange(refs.shape[0]):
        r0 = refs[g, 0]
        c0 = refs[g, 1]
        best_d = np.empty(cap)
        best_r = np.empty(cap, np.int64)
        best_c = np.empty(cap, np.int64)
        best_d[0] = 0.0
        best_r[0] = r0
        best_c[0] = c0
        n = 1
        rlo = max(0, r0 - radius)
        rhi = min(h - block, r0 + radius)
        clo = max(0, c0 - radius)
        chi = min(w - block, c0 + radius)
        for r in range(rlo, rhi + 1):
            for c in range(clo, chi + 1):
                if r == r0 and c == c0:
                    continue
                s = 0.0
                for y in range(block):
                    for x in range(block):
                        d = img[r0 + y, c0 + x] - img[r + y, c + x]
                        s += d * d
                s *= inv_area
                if s > thresh:
                    continue
                if n == cap and s >= best_d[n - 1]:
                    continue
                # insertion after equal distances keeps row-major tiebreak
                k = n if n < cap else cap - 1
                while k > 1 and best_d[k - 1] > s:
                    best_d[k] = best_d[k - 1]
                    best_r[k] = best_r[k - 1]
                    best_c[k] = best_c[k - 1]
                    k -= 1
                best_d[k] = s
                best_r[k] = r
                best_c[k] = c
                if n < cap:
                    n += 1
        p = 1
        while p * 2 <= n:
            p *= 2
        out_count[g] = p
        for k in range(p):
            out_pos[g, k, 0] = best_r[k]
            out_pos[g, k, 1] = best_c[k]
            out_dist[g, k] = best_d[k]


def _match(img, refs, profile):
    refs = np.ascontiguousarray(refs, dtype=np.int64)
    g = len(refs)
    cap = profile.group_max
    pos = np.zeros((g, cap, 2), np.int64)
    dist = np.zeros((g, cap))
    count = np.zeros(g, np.int64)
    _match_kernel(
        np.ascontiguousarray(img, dtype=np.float64), refs, profile.block,
        profile.search_radius, float(profile.match_threshold), cap, pos, dist, count,
    )
    return pos, dist, count


def check_fits(shape, block):
    if shape[0] < block or shape[1] < block:
        raise ImageTooSmallError(f"image {shape} smaller than the {block}x{block} block")


def block_match(img, ref_pos, profile: Bm3dProfile, source=None) -> BlockGroup:
    """Group blocks similar to the one at ``ref_pos`` (row, col).

    Distances are computed on ``img``; block data is taken from ``source``
    (defaults to ``img``). Members are sorted by distance with row-major
    tiebreak, the reference first, and truncated to a power of two.
    """
    u = as_image(img)
    b = profile.block
    check_fits(u.shape, b)
    r, c = map(int, ref_pos)
    if not (0 <= r <= u.shape[0] - b and 0 <= c <= u.shape[1] - b):
        raise IndexError(f"reference block at {ref_pos} not inside image {u.shape}")
    pos, dist, count = _match(u, [[r, c]], profile)
    n = int(count[0])
    positions = pos[0, :n].copy()
    src = u if source is None else as_image(source)
    if src.shape != u.shape:
        raise ValueError("source and matching images differ in size")
    data = _gather(_blocks_view(src, b), positions).copy()
    return BlockGroup((r, c), positions, dist[0, :n].copy(), data)


def _blocks_view(img, block):
    return sliding_window_view(img, (block, block))


def _gather(view, positions):
    return view[positions[..., 0], positions[..., 1]]


# --------------------------------------------------------------- filtering


def _spectrum(vol, fwd):
    """3D transform of volumes shaped (G, n, b, b)."""
    g, n, b, _ = vol.shape
    spec = fwd @ vol @ fwd.T
    spec = haar_matrix(n) @ spec.reshape(g, n, b * b)
    return spec.reshape(g, n, b, b)


def _inverse_spectrum(spec, inv):
    g, n, b, _ = spec.shape
    vol = haar_matrix(n).T @ spec.reshape(g, n, b * b)
    vol = vol.reshape(g, n, b, b)
    return inv @ vol @ inv.T


def _ht_batch(vol, profile):
    fwd, inv = transform_pair(profile.transform2d, profile.block)
    spec = _spectrum(vol, fwd)
    keep = np.abs(spec) >= profile.lambda3d * profile.sigma
    keep[:, 0, 0, 0] = True  # DC of the whole volume
    spec = np.where(keep, spec, 0.0)
    retained = np.count_nonzero(spec.reshape(len(spec), -1), axis=1)
    weights = np.ones(len(spec))
    nz = retained > 0
    weights[nz] = 1.0 / (profile.sigma**2 * retained[nz])
    return _inverse_spectrum(spec, inv), weights, retained


def _wiener_batch(noisy, pilot, profile):
    fwd, inv = transform_pair(profile.transform2d, profile.block)
    p = _spectrum(pilot, fwd)
    p2 = p * p
    gain = p2 / (p2 + profile.sigma**2)
    spec = gain * _spectrum(noisy, fwd)
    energy = np.sum((gain * gain).reshape(len(gain), -1), axis=1)
    weights = np.ones(len(gain))
    nz = energy > 0
    weights[nz] = 1.0 / (profile.sigma**2 * energy[nz])
    return _inverse_spectrum(spec, inv), weights


def ht_filter_group(group: BlockGroup, profile: Bm3dProfile):
    """Hard-threshold collaborative filtering of one group.

    Returns ``(filtered volume, weight)``; the weight is
    ``1 / (sigma**2 * N_retained)``, or 1 when nothing survives.
    """
    est, weights, _ = _ht_batch(group.data[None].astype(np.float64), profile)
    return est[0], float(weights[0])


def wiener_filter_group(noisy_group: BlockGroup, pilot_group: BlockGroup,
                        profile: Bm3dProfile):
    """Empirical Wiener filtering of ``noisy_group`` with gains from the pilot."""
    if noisy_group.data.shape != pilot_group.data.shape:
        raise ValueError("noisy and pilot groups differ in geometry")
    est, weights = _wiener_batch(
        noisy_group.data[None].astype(np.float64),
        pilot_group.data[None].astype(np.float64),
        profile,
    )
    return est[0], float(weights[0])


# ------------------------------------------------------------- aggregation


@numba.njit(cache=True)
def _accumulate(num, den, positions, blocks, weights, window):
    b = window.shape[0]
    for g in range(blocks.shape[0]):
        wg = weights[g]
        for m in range(blocks.shape[1]):
            r = positions[g, m, 0]
            c = positions[g, m, 1]
            for y in range(b):
                for x in range(b):
                    k = wg * window[y, x]
                    num[r + y, c + x] += k * blocks[g, m, y, x]
                    den[r + y, c + x] += k


def _finish(num, den):
    if np.any(den <= 0):
        raise ValueError("aggregation left pixels uncovered")
    return num / den


def aggregate(contributions, shape, profile: Bm3dProfile) -> np.ndarray:
    """Kaiser-weighted average of overlapping block estimates.

    ``contributions`` is an iterable of ``(positions, volume, weight)`` with
    positions shaped (count, 2) and volume (count, block, block).
    """
    num = np.zeros(shape)
    den = np.zeros(shape)
    window = profile.kaiser()
    b = profile.block
    for positions, volume, weight in contributions:
        positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
        volume = np.asarray(volume, dtype=np.float64).reshape(-1, b, b)
        if np.any(positions < 0) or np.any(positions[:, 0] + b > shape[0]) or np.any(
            positions[:, 1] + b > shape[1]
        ):
            raise IndexError("contribution block outside the canvas")
        _accumulate(num, den, positions[None], volume[None],
                    np.array([float(weight)]), window)
    return _finish(num, den)


# ------------------------------------------------------------------ stages


def reference_grid(shape, profile: Bm3dProfile) -> np.ndarray:
    """Top-left corners of reference blocks, row-major, edges always included."""
    b, step = profile.block, profile.step

    def axis(n):
        pts = list(range(0, n - b + 1, step))
        if pts[-1] != n - b:
            pts.append(n - b)
        return pts

    rows, cols = axis(shape[0]), axis(shape[1])
    return np.array([(r, c) for r in rows for c in cols], dtype=np.int64)


def _run_stage(match_img, sources, shape, profile, filt, trace=None):
    b = profile.block
    refs = reference_grid(shape, profile)
    views = [_blocks_view(s, b) for s in sources]
    num = np.zeros(shape)
    den = np.zeros(shape)
    window = profile.kaiser()
    for start in range(0, len(refs), CHUNK):
        chunk = refs[start : start + CHUNK]
        pos, _, count = _match(match_img, chunk, profile)
        for n in np.unique(count):
            idx = np.flatnonzero(count == n)
            p = pos[idx, :n]
            vols = [_gather(v, p) for v in views]
            est, weights, retained = filt(*vols)
            _accumulate(num, den, p, est, weights, window)
            if trace is not None:
                for j, gi in enumerate(idx):
                    trace.append((start + gi, int(chunk[gi, 0]), int(chunk[gi, 1]), int(n),
                                  int(retained[j]) if retained is not None else -1,
                                  float(weights[j])))
    return _finish(num, den)


def bm3d_basic(noisy, profile: Bm3dProfile, trace=None) -> np.ndarray:
    """Basic estimate: grouping on ``noisy`` and 3D hard thresholding."""
    u = as_image(noisy)
    check_fits(u.shape, profile.block)

    def filt(vol):
        return _ht_batch(vol, profile)

    out = _run_stage(u, [u], u.shape, profile, filt, trace)
    if trace is not None:
        trace.sort()
    return out


def bm3d_final(noisy, pilot, profile: Bm3dProfile, trace=None) -> np.ndarray:
    """Final estimate: grouping on ``pilot``, Wiener gains from ``pilot``."""
    u = as_image(noisy)
    p = as_image(pilot)
    if u.shape != p.shape:
        raise ValueError(f"noisy {u.shape} and pilot {p.shape} differ in size")
    check_fits(u.shape, profile.block)

    def filt(noisy_vol, pilot_vol):
        est, weights = _wiener_batch(noisy_vol, pilot_vol, profile)
        return est, weights, None

    out = _run_stage(p, [u, p], u.shape, profile, filt, trace)
    if trace is not None:
        trace.sort()
    return out


def bm3d(noisy, sigma: float | None = None, basic: Bm3dProfile | None = None,
         final: Bm3dProfile | None = None) -> np.ndarray:
    """Full two-stage BM3D with the default profiles for ``sigma``."""
    if basic is None or final is None:
        if sigma is None:
            raise ValueError("give sigma or both profiles")
        basic = basic or Bm3dProfile.basic(sigma)
        final = final or Bm3dProfile.final(sigma)
    pilot = bm3d_basic(noisy, basic)
    return bm3d_final(noisy, pilot, final)


TRACE_COLUMNS = ("index", "ref_row", "ref_col", "count", "n_retained", "weight")


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(TRACE_COLUMNS)
        for row in sorted(trace):
            out.writerow(row[:5] + (repr(row[5]),))
