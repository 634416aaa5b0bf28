import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mlfe_bm3d.metrics import (
    C1,
    C2,
    bresenham,
    decode_ssim_map,
    line_profile,
    mse,
    mssim,
    psnr,
    psnr_from_rmse,
    quality_report,
    render_signed,
    render_ssim_map,
    rmse,
    snr,
    ssim_diff_map,
    ssim_map,
    window_weights,
    write_profile_csv,
)


def test_snr_hand_example():
    # sum (u_t - mean)^2 = 50, sum err^2 = 2
    assert snr([[10.0, 20.0]], [[11.0, 19.0]]) == pytest.approx(10 * math.log10(25))
    assert snr([[10.0, 20.0]], [[11.0, 19.0]]) == pytest.approx(13.979, abs=5e-4)


def test_snr_power_convention():
    assert snr([[10.0, 20.0]], [[11.0, 19.0]], "power") == pytest.approx(
        10 * math.log10((121 + 361) / 2))
    with pytest.raises(ValueError):
        snr([[1.0]], [[2.0]], "bogus")


def test_identical_images_give_infinite_sentinels():
    u = np.arange(64.0).reshape(8, 8)
    rep = quality_report(u, u)
    assert rep.snr == math.inf and rep.psnr == math.inf
    assert rep.rmse == 0.0 and rep.mssim == pytest.approx(1.0)


def test_psnr_cases():
    u = np.zeros((4, 4))
    assert psnr(u + 255.0, u) == pytest.approx(0.0)
    assert psnr_from_rmse(18.7178) == pytest.approx(22.6857, abs=1e-3)
    assert psnr_from_rmse(5.9859) == pytest.approx(32.5882, abs=1e-3)


def test_rmse_constant_offset():
    u = np.random.default_rng(0).uniform(0, 200, (9, 9))
    assert rmse(u - 7.5, u) == pytest.approx(7.5)
    assert rmse(u, u) == 0.0


@given(arrays(np.float64, (6, 7), elements=st.floats(0, 255)),
       arrays(np.float64, (6, 7), elements=st.floats(0, 255)))
def test_psnr_rmse_identity_and_symmetry(a, b):
    if mse(a, b) == 0:
        return
    assert psnr(a, b) == pytest.approx(20 * math.log10(255 / rmse(a, b)), abs=1e-9)
    assert rmse(a, b) == rmse(b, a)


def test_snr_is_not_symmetric():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(0, 255, (2, 16, 16))
    assert snr(a, b) != pytest.approx(snr(b, a))


def test_ssim_constant_images_luminance_only():
    a, b = 100.0, 140.0
    m = ssim_map(np.full((12, 12), a), np.full((12, 12), b))
    assert m.shape == (5, 5)
    np.testing.assert_allclose(m, (2 * a * b + C1) / (a * a + b * b + C1))


def test_ssim_against_direct_window_oracle():
    # scalar re-evaluation of the three-factor product for a few windows
    rng = np.random.default_rng(5)
    a, b = rng.uniform(0, 255, (2, 14, 11))
    for weighting in ("uniform", "gaussian"):
        m = ssim_map(a, b, weighting=weighting)
        w1 = window_weights(8, weighting)
        w = np.outer(w1, w1)
        for i, j in [(0, 0), (3, 2), (6, 3)]:
            x, y = a[i : i + 8, j : j + 8], b[i : i + 8, j : j + 8]
            mx, my = np.sum(w * x), np.sum(w * y)
            vx, vy = np.sum(w * (x - mx) ** 2), np.sum(w * (y - my) ** 2)
            cov = np.sum(w * (x - mx) * (y - my))
            sx, sy = math.sqrt(vx), math.sqrt(vy)
            lum = (2 * mx * my + C1) / (mx * mx + my * my + C1)
            con = (2 * sx * sy + C2) / (vx + vy + C2)
            stru = (cov + C2 / 2) / (sx * sy + C2 / 2)
            assert m[i, j] == pytest.approx(lum * con * stru, abs=1e-10)


def test_ssim_map_bounds_and_errors():
    rng = np.random.default_rng(7)
    a = rng.uniform(0, 255, (20, 20))
    m = ssim_map(a, 255 - a)
    assert m.min() >= -1 and m.max() <= 1
    with pytest.raises(ValueError):
        ssim_map(np.zeros((7, 9)), np.zeros((7, 9)))
    with pytest.raises(ValueError):
        ssim_map(np.zeros((9, 9)), np.zeros((9, 10)))


def test_mssim_conventions():
    u = np.random.default_rng(1).uniform(0, 255, (16, 16))
    assert mssim(u, u, "squared") == pytest.approx(1.0)
    m = ssim_map(u, u + 20)
    assert mssim(u, u + 20) == pytest.approx(m.mean())
    assert mssim(u, u + 20, "squared") == pytest.approx(np.mean(m**2))
    with pytest.raises(ValueError):
        mssim(u, u, "cubed")


def test_ssim_render_roundtrip():
    m = np.array([[-1.0, 0.0, 1.0]])
    np.testing.assert_allclose(render_ssim_map(m), [[0.0, 127.5, 255.0]])
    np.testing.assert_allclose(decode_ssim_map(render_ssim_map(m)), m)


def test_signed_render():
    zero = render_signed(np.zeros((3, 3)))
    assert np.all(zero == 255)
    red = render_signed(np.full((2, 2), 0.1))
    assert np.all(red[..., 0] == 255) and np.all(red[..., 1] == 0) and np.all(red[..., 2] == 0)
    d = np.array([[0.5, -0.25]])
    rgb = render_signed(d)
    assert tuple(rgb[0, 0]) == (255, 0, 0)
    assert tuple(rgb[0, 1]) == (128, 128, 255)
    with pytest.raises(ValueError):
        ssim_diff_map(np.zeros((2, 2)), np.zeros((3, 2)))
    np.testing.assert_allclose(ssim_diff_map(np.full((2, 2), 0.9), np.full((2, 2), 0.8)), 0.1)


@given(st.tuples(st.integers(0, 40), st.integers(0, 40)),
       st.tuples(st.integers(0, 40), st.integers(0, 40)))
def test_bresenham_properties(p0, p1):
    pts = bresenham(p0, p1)
    (x0, y0), (x1, y1) = p0, p1
    assert pts[0] == p0 and pts[-1] == p1
    assert len(pts) == max(abs(x1 - x0), abs(y1 - y0)) + 1
    for (xa, ya), (xb, yb) in zip(pts, pts[1:]):
        assert max(abs(xb - xa), abs(yb - ya)) == 1
    # oracle: every pixel is within half a pixel of the ideal line along
    # the minor axis
    for x, y in pts:
        if abs(x1 - x0) >= abs(y1 - y0):
            if x1 != x0:
                ideal = y0 + (x - x0) * (y1 - y0) / (x1 - x0)
                assert abs(y - ideal) <= 0.5 + 1e-12
        else:
            ideal = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            assert abs(x - ideal) <= 0.5 + 1e-12


def test_bresenham_exact_on_octants():
    assert bresenham((0, 0), (5, 2)) == [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 2)]
    assert bresenham((0, 0), (0, 3)) == [(0, 0), (0, 1), (0, 2), (0, 3)]
    assert bresenham((3, 3), (0, 0)) == [(3, 3), (2, 2), (1, 1), (0, 0)]


def test_line_profile_cases(tmp_path):
    flat = np.full((10, 10), 42.0)
    prof = line_profile(flat, (1, 2), (5, 2))
    assert [v for _, v in prof] == [42.0] * 5
    assert line_profile(flat, (3, 3), (3, 3)) == [(0.0, 42.0)]
    grad = np.tile(np.arange(20.0), (20, 1))  # u(x, y) = x
    vals = [v for _, v in line_profile(grad, (0, 0), (19, 13))]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(IndexError):
        line_profile(flat, (0, 0), (10, 0))

    out = tmp_path / "p.csv"
    assert write_profile_csv(grad, (0, 0), (4, 4), out) == 5
    rows = list(csv.DictReader(out.open()))
    assert rows[0].keys() == {"x", "y", "distance", "intensity"}
    assert float(rows[-1]["distance"]) == pytest.approx(math.hypot(4, 4))
