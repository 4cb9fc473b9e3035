import csv

import numpy as np
import pytest

from st_downscaler import metrics as mt

C1 = (0.01) ** 2


def rng_img(seed, shape=(24, 24)):
    return np.random.default_rng(seed).random(shape)


def test_rmse_mae_examples():
    full = np.ones((1, 2), bool)
    assert mt.rmse(np.array([[0.0, 0.2]]), np.array([[0.2, 0.2]]), full) == pytest.approx(np.sqrt(0.02), abs=1e-6)
    assert mt.rmse(np.array([[0.0, 0.2]]), np.array([[0.2, 0.2]]), full) == pytest.approx(0.141421, abs=1e-6)
    a = rng_img(0)
    assert mt.rmse(a, a, np.ones_like(a, bool)) == 0.0
    assert mt.mae(a, a + 0.25, np.ones_like(a, bool)) == pytest.approx(0.25)


def test_rmse_bounds_mean_error():
    a, b = rng_img(1), rng_img(2)
    m = rng_img(3) > 0.3
    assert mt.rmse(a, b, m) >= abs(mt.mean_error(a, b, m))
    assert mt.mae(a, b, m) >= 0


def test_land_excluded():
    a, b = np.zeros((4, 4)), np.zeros((4, 4))
    b[0, 0] = 1.0
    m = np.ones((4, 4), bool)
    m[0, 0] = False
    assert mt.rmse(a, b, m) == 0.0
    with pytest.raises(ValueError):
        mt.rmse(a, b, np.zeros((4, 4), bool))


def test_ssim_identity_and_symmetry():
    a, b = rng_img(4), rng_img(5)
    assert abs(mt.ssim(a, a) - 1.0) <= 1e-9
    assert abs(mt.ssim(a, b) - mt.ssim(b, a)) <= 1e-9
    assert mt.ssim(a, b) < 0.5


def test_ssim_constant_closed_form():
    got = mt.ssim(np.zeros((16, 16)), np.ones((16, 16)))
    assert got == pytest.approx(C1 / (1 + C1), abs=1e-6)


def test_ssim_matches_loop_reference():
    a, b = rng_img(6, (13, 14)), rng_img(7, (13, 14))
    w = mt.gaussian_window()
    vals = []
    for i in range(13 - 10):
        for j in range(14 - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            c2 = 0.03**2
            vals.append((2 * ma * mb + C1) * (2 * cov + c2) / ((ma**2 + mb**2 + C1) * (va + vb + c2)))
    assert mt.ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-12)


def test_ssim_skips_land_windows():
    a, b = rng_img(8), rng_img(9)
    m = np.ones_like(a, bool)
    m[:, :12] = False
    b2 = b.copy()
    b2[:, :12] = 5.0  # only land changes
    assert mt.ssim(a, b, m) == pytest.approx(mt.ssim(a, b2, m), abs=1e-12)
    with pytest.raises(ValueError):
        mt.ssim(a, b, np.zeros_like(m))


def test_gmsd_properties():
    a = rng_img(10)
    assert abs(mt.gmsd(a, a)) <= 1e-9
    b = a.copy()
    b[5:12, 5:12] = 0.0
    assert mt.gmsd(a, b) > 0
    assert mt.gmsd(a, b) == pytest.approx(mt.gmsd(b, a), abs=1e-12)


def test_residual_maps():
    y = np.full((4, 4), 0.5)
    assert np.all(mt.residual_map(y, y) == 0)
    assert np.all(mt.residual_map(y, y + 0.01, gain=50) == 128)
    assert np.all(mt.residual_map(y, y + 0.3, gain=0) == 0)
    assert mt.residual_map(y, y + 1.0).dtype == np.uint8
    assert np.all(mt.frame_difference_map(y, y + 0.01, gain=20) == 51)


def test_report_aggregation_and_csv(tmp_path):
    rep = mt.MetricReport()
    rng = np.random.default_rng(0)
    m = np.ones((16, 16), bool)
    for sid in ("a", "b"):
        y = rng.random((3, 3, 16, 16))
        rep.add_sample(sid, y, y + 0.1, m)
    assert len(rep.rows) == 18
    s = rep.summary()
    assert s["all"]["rmse"] == pytest.approx(0.1) and s["inter"]["mae"] == pytest.approx(0.1)
    assert s["intra"]["ssim"] <= 1.0
    path = rep.write_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(path)))
    assert rows[0].keys() == {"sample", "frame", "channel", "rmse", "mae", "ssim", "gmsd", "lpips", "tag"}
    assert {r["tag"] for r in rows if r["frame"] == "1"} == {"inter"}
    assert all(r["lpips"] == "" for r in rows)
