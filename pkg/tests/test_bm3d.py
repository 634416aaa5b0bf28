import csv

import numpy as np
import pytest
from scipy import fft

from mlfe_bm3d.bm3d import (
    TRACE_COLUMNS,
    BlockGroup,
    Bm3dProfile,
    ImageTooSmallError,
    aggregate,
    block_match,
    bm3d,
    bm3d_basic,
    bm3d_final,
    ht_filter_group,
    reference_grid,
    wiener_filter_group,
    write_trace,
)


def _brute_force_match(img, ref, profile):
    # oracle: score every candidate, sort by (distance, row, col), reference first
    b, rad = profile.block, profile.search_radius
    r0, c0 = ref
    h, w = img.shape
    refblk = img[r0 : r0 + b, c0 : c0 + b]
    cands = []
    for r in range(max(0, r0 - rad), min(h - b, r0 + rad) + 1):
        for c in range(max(0, c0 - rad), min(w - b, c0 + rad) + 1):
            if (r, c) == (r0, c0):
                continue
            d = np.mean((refblk - img[r : r + b, c : c + b]) ** 2)
            if d <= profile.match_threshold:
                cands.append((d, r, c))
    cands.sort()
    members = [(r0, c0)] + [(r, c) for _, r, c in cands]
    members = members[: profile.group_max]
    p = 1
    while 2 * p <= len(members):
        p *= 2
    return members[:p]


def test_matching_against_brute_force():
    rng = np.random.default_rng(11)
    for trial in range(50):
        # integer levels keep distances exact, so ties resolve identically
        img = rng.integers(0, 6, (32, 32)).astype(float) * 10
        prof = Bm3dProfile(
            sigma=10.0,
            block=int(rng.choice([4, 8])),
            search_radius=int(rng.integers(0, 9)),
            group_max=int(rng.choice([1, 4, 16])),
            match_threshold=float(rng.choice([0.0, 600.0, 1000.0, 5000.0])),
        )
        ref = tuple(int(v) for v in rng.integers(0, 32 - prof.block + 1, 2))
        g = block_match(img, ref, prof)
        assert [tuple(p) for p in g.positions] == _brute_force_match(img, ref, prof), trial
        assert g.count & (g.count - 1) == 0


def test_matching_structure():
    prof = Bm3dProfile(sigma=5.0, search_radius=6)
    g = block_match(np.full((32, 32), 50.0), (10, 10), prof)
    assert g.count == prof.group_max
    np.testing.assert_array_equal(g.distances, 0.0)

    rng = np.random.default_rng(3)
    img = rng.uniform(0, 255, (40, 40))
    img[20:28, 25:33] = img[4:12, 6:14]
    g = block_match(img, (4, 6), Bm3dProfile(sigma=5.0, match_threshold=1e9))
    assert tuple(g.positions[0]) == (4, 6)
    assert tuple(g.positions[1]) == (20, 25) and g.distances[1] == 0.0
    assert np.all(np.diff(g.distances[1:]) >= 0)
    np.testing.assert_array_equal(g.data[1], img[20:28, 25:33])
    with pytest.raises(IndexError):
        block_match(img, (35, 0), prof)


def _haar_basis(n):
    # recursive orthonormal Haar: averages of the coarser basis, then local differences
    if n == 1:
        return np.ones((1, 1))
    top = np.kron(_haar_basis(n // 2), [1.0, 1.0]) / np.sqrt(2)
    bottom = np.kron(np.eye(n // 2), [1.0, -1.0]) / np.sqrt(2)
    return np.vstack([top, bottom])


def _transform_3d(n, b):
    d = fft.dct(np.eye(b), norm="ortho", axis=0)
    return np.kron(_haar_basis(n), np.kron(d, d))


def _group(vol):
    n = len(vol)
    return BlockGroup((0, 0), np.zeros((n, 2), int), np.zeros(n), vol)


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_ht_filter_matches_scalar_oracle(n):
    rng = np.random.default_rng(n)
    prof = Bm3dProfile(sigma=6.0, block=4, transform2d="dct", lambda3d=2.7)
    vol = rng.normal(100, 20, (n, 4, 4))
    est, weight = ht_filter_group(_group(vol), prof)
    t = _transform_3d(n, 4)
    spec = t @ vol.ravel()
    kept = np.array([s if (i == 0 or abs(s) >= 2.7 * 6.0) else 0.0 for i, s in enumerate(spec)])
    np.testing.assert_allclose(est.ravel(), t.T @ kept, atol=1e-9)
    assert weight == pytest.approx(1.0 / (36.0 * np.count_nonzero(kept)), rel=1e-12)


@pytest.mark.parametrize("n", [1, 4, 8])
def test_wiener_filter_matches_scalar_oracle(n):
    rng = np.random.default_rng(10 + n)
    prof = Bm3dProfile(sigma=9.0, block=4, transform2d="dct")
    noisy = rng.normal(100, 20, (n, 4, 4))
    pilot = rng.normal(100, 20, (n, 4, 4))
    est, weight = wiener_filter_group(_group(noisy), _group(pilot), prof)
    t = _transform_3d(n, 4)
    p = t @ pilot.ravel()
    gain = np.array([v * v / (v * v + 81.0) for v in p])
    np.testing.assert_allclose(est.ravel(), t.T @ (gain * (t @ noisy.ravel())), atol=1e-9)
    assert weight == pytest.approx(1.0 / (81.0 * np.sum(gain**2)), rel=1e-12)


def test_filter_edge_cases():
    prof = Bm3dProfile(sigma=5.0)
    const = _group(np.full((4, 8, 8), 42.0))
    est, w = ht_filter_group(const, prof)
    np.testing.assert_allclose(est, 42.0, atol=1e-10)
    assert w == pytest.approx(1.0 / 25.0)  # only the DC survives

    rng = np.random.default_rng(0)
    vol = rng.normal(0, 30, (8, 8, 8))
    est, w = ht_filter_group(_group(vol), Bm3dProfile(sigma=5.0, lambda3d=0.0))
    np.testing.assert_allclose(est, vol, atol=1e-9)
    assert w == pytest.approx(1.0 / (25.0 * vol.size))

    est, w = wiener_filter_group(_group(vol), _group(np.zeros_like(vol)), prof)
    np.testing.assert_allclose(est, 0.0)
    assert w == 1.0
    est, _ = wiener_filter_group(_group(vol), _group(vol * 1e6), prof)
    np.testing.assert_allclose(est, vol, atol=1e-6)
    with pytest.raises(ValueError):
        wiener_filter_group(_group(vol), _group(vol[:4]), prof)


def test_ht_retained_count_monotone_in_threshold():
    vol = np.random.default_rng(1).normal(0, 40, (8, 8, 8))
    kept = []
    for lam in (0.0, 0.5, 1.0, 2.0, 2.7, 4.0):
        _, w = ht_filter_group(_group(vol), Bm3dProfile(sigma=10.0, lambda3d=lam))
        kept.append(round(1.0 / (100.0 * w)))
    assert all(a >= b for a, b in zip(kept, kept[1:]))
    assert kept[0] == vol.size and kept[-1] >= 1


def test_aggregation():
    prof = Bm3dProfile(sigma=1.0, block=4)
    blk = np.random.default_rng(2).uniform(0, 9, (1, 4, 4))
    out = aggregate([([(0, 0)], blk, 0.3)], (4, 4), prof)
    np.testing.assert_allclose(out, blk[0], atol=1e-12)
    twice = aggregate([([(0, 0)], blk, 0.3), ([(0, 0)], blk, 2.0)], (4, 4), prof)
    np.testing.assert_allclose(twice, blk[0], atol=1e-12)
    with pytest.raises(ValueError):
        aggregate([([(0, 0)], blk, 1.0)], (5, 4), prof)
    with pytest.raises(IndexError):
        aggregate([([(2, 0)], blk, 1.0)], (5, 4), prof)


def test_reference_grid_covers_edges():
    g = reference_grid((20, 17), Bm3dProfile(sigma=1.0))
    assert set(g[:, 0]) == {0, 3, 6, 9, 12}
    assert set(g[:, 1]) == {0, 3, 6, 9}
    assert tuple(g[0]) == (0, 0)


def test_constant_image():
    c = np.full((40, 36), 123.0)
    basic = bm3d_basic(c, Bm3dProfile.basic(20.0))
    np.testing.assert_allclose(basic, c, atol=1e-6)
    # the Wiener gain also shrinks the volume DC: a full group of 16 constant
    # 8x8 blocks has DC = 32 * 123, so every pixel lands on 123 * g
    dc = 32 * 123.0
    g = dc**2 / (dc**2 + 20.0**2)
    np.testing.assert_allclose(bm3d(c, 20.0), 123.0 * g, rtol=1e-12)


def test_final_stage_with_clean_pilot_approaches_identity():
    # as sigma -> 0 every Wiener gain tends to 1 and the output to the input
    u = np.random.default_rng(4).uniform(0, 255, (32, 32))
    out = bm3d_final(u, u, Bm3dProfile.final(1e-3))
    np.testing.assert_allclose(out, u, atol=1e-4)


def test_denoising_helps_and_is_deterministic():
    rng = np.random.default_rng(5)
    yy, xx = np.mgrid[:48, :48]
    clean = 80 + 60 * ((xx // 12 + yy // 12) % 2)
    noisy = clean + rng.normal(0, 15, clean.shape)
    a = bm3d(noisy, 15.0)
    b = bm3d(noisy, 15.0)
    assert a.tobytes() == b.tobytes()
    assert np.mean((a - clean) ** 2) < 0.5 * np.mean((noisy - clean) ** 2)


def test_final_stage_beats_basic():
    from mlfe_bm3d.testimages import SYNTHETIC

    for i, (name, make) in enumerate(sorted(SYNTHETIC.items())):
        clean = make(96)
        noisy = clean + np.random.default_rng(i).normal(0, 20, clean.shape)
        pilot = bm3d_basic(noisy, Bm3dProfile.basic(20.0))
        final = bm3d_final(noisy, pilot, Bm3dProfile.final(20.0))
        assert np.mean((final - clean) ** 2) <= np.mean((pilot - clean) ** 2), name


@pytest.mark.parametrize("sigma", [1.0, 10.0, 50.0, 100.0])
def test_no_nans_across_sigma(sigma):
    noisy = np.random.default_rng(6).uniform(0, 255, (24, 24))
    assert np.all(np.isfinite(bm3d(noisy, sigma)))


def test_trace(tmp_path):
    noisy = np.random.default_rng(7).uniform(0, 255, (20, 20))
    trace = []
    bm3d_basic(noisy, Bm3dProfile.basic(20.0), trace=trace)
    refs = reference_grid(noisy.shape, Bm3dProfile(sigma=1.0))
    assert [t[0] for t in trace] == list(range(len(refs)))
    assert all(t[4] >= 1 and t[5] > 0 for t in trace)
    path = tmp_path / "t.csv"
    write_trace(trace, path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == TRACE_COLUMNS and len(rows) == len(refs) + 1


def test_errors():
    with pytest.raises(ImageTooSmallError):
        bm3d(np.zeros((7, 30)), 10.0)
    with pytest.raises(ValueError):
        bm3d(np.zeros((16, 16)))
    with pytest.raises(ValueError):
        Bm3dProfile(sigma=1.0, group_max=12)
    with pytest.raises(ValueError):
        Bm3dProfile(sigma=0.0)
    with pytest.raises(ValueError):
        bm3d_final(np.zeros((16, 16)), np.zeros((16, 17)), Bm3dProfile.final(1.0))
