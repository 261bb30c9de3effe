import math

import numpy as np
import pytest

from mslstm.errors import ConfigError, ShapeError
from mslstm.metrics import (
    ContingencyTable,
    MetricReport,
    contingency,
    csi,
    hss,
    mae,
    mse,
    psnr,
    ssim,
)


def ref_frame_sums(pred, target, power):
    """Loop-based sum-over-pixels metric, averaged over leading axes."""
    pred = pred.reshape(-1, *pred.shape[-3:])
    target = target.reshape(-1, *target.shape[-3:])
    totals = []
    for fp, ft in zip(pred, target):
        acc = 0.0
        for c in range(fp.shape[0]):
            for y in range(fp.shape[1]):
                for x in range(fp.shape[2]):
                    e = fp[c, y, x] - ft[c, y, x]
                    acc += abs(e) ** power
        totals.append(acc)
    return sum(totals) / len(totals)


def ref_ssim(a, b, k=11, sigma=1.5, c1=0.01**2, c2=0.03**2):
    """Double-loop local SSIM over valid window positions."""
    win = np.zeros((k, k))
    half = (k - 1) // 2
    for y in range(k):
        for x in range(k):
            win[y, x] = math.exp(-((y - half) ** 2 + (x - half) ** 2) / (2 * sigma * sigma))
    win /= win.sum()
    vals = []
    for y in range(a.shape[0] - k + 1):
        for x in range(a.shape[1] - k + 1):
            wa = a[y : y + k, x : x + k]
            wb = b[y : y + k, x : x + k]
            mu_a = (win * wa).sum()
            mu_b = (win * wb).sum()
            va = (win * wa * wa).sum() - mu_a * mu_a
            vb = (win * wb * wb).sum() - mu_b * mu_b
            cov = (win * wa * wb).sum() - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
            )
    return sum(vals) / len(vals)


def test_mse_mae_zero_for_identical():
    x = np.random.default_rng(0).uniform(0, 1, (3, 1, 8, 8))
    assert mse(x, x) == 0.0
    assert mae(x, x) == 0.0


def test_mse_sum_over_pixels_convention():
    a = np.zeros((1, 64, 64))
    b = np.full((1, 64, 64), 0.1)
    assert abs(mse(a, b) - 40.96) < 1e-9
    assert abs(mae(a, b) - 409.6) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_mse_mae_match_loop_reference(seed):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0, 1, (2, 3, 1, 16, 16))
    target = rng.uniform(0, 1, (2, 3, 1, 16, 16))
    assert abs(mse(pred, target) - ref_frame_sums(pred, target, 2)) < 1e-9
    assert abs(mae(pred, target) - ref_frame_sums(pred, target, 1)) < 1e-9


def test_metric_shape_mismatch():
    with pytest.raises(ShapeError):
        mse(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


def test_ssim_self_similarity_is_one():
    x = np.random.default_rng(1).uniform(0, 1, (16, 16))
    assert abs(ssim(x, x) - 1.0) < 1e-12


def test_ssim_anticorrelated_checkerboard_negative():
    ys, xs = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
    checker = ((ys + xs) % 2).astype(np.float64)
    assert ssim(checker, 1.0 - checker) < 0.0


def test_ssim_symmetry():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (16, 16))
    b = rng.uniform(0, 1, (16, 16))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_double_loop_reference(seed):
    rng = np.random.default_rng(10 + seed)
    a = rng.uniform(0, 1, (16, 16))
    b = np.clip(a + rng.normal(0, 0.1, (16, 16)), 0, 1)
    assert abs(ssim(a, b) - ref_ssim(a, b)) < 1e-9


def test_ssim_window_too_large():
    with pytest.raises(ConfigError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_psnr_constant_error():
    a = np.zeros((1, 32, 32))
    b = np.full((1, 32, 32), 0.1)
    assert abs(psnr(a, b) - 20.0) < 1e-12


def test_psnr_identical_capped():
    x = np.random.default_rng(3).uniform(0, 1, (1, 8, 8))
    assert psnr(x, x) == 99.0


def test_psnr_halving_error_gains_six_db():
    a = np.zeros((1, 32, 32))
    gain = psnr(a, np.full((1, 32, 32), 0.05)) - psnr(a, np.full((1, 32, 32), 0.1))
    assert abs(gain - 20.0 * math.log10(2.0)) < 1e-9  # ~6.0206 dB


def test_contingency_counts():
    pred = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
    obs = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
    t = contingency(pred, obs, 0.5)
    assert (t.tp, t.fp, t.fn, t.tn) == (2, 1, 1, 1)
    assert t.total == 5


def test_perfect_forecast_scores_one():
    obs = np.array([[0.0, 1.0], [1.0, 0.0]])
    t = contingency(obs, obs, 0.5)
    assert csi(t) == 1.0
    assert hss(t) == 1.0


def test_hand_computed_table():
    t = ContingencyTable(tp=2, fp=1, fn=1, tn=0)
    assert csi(t) == 0.5
    assert hss(t) == pytest.approx(-1.0 / 3.0)


def test_degenerate_tables_report_absent():
    empty = contingency(np.zeros(4), np.zeros(4), 0.5)
    assert csi(empty) is None
    assert hss(empty) is None


@pytest.mark.parametrize("seed", range(10))
def test_score_ranges(seed):
    rng = np.random.default_rng(seed)
    t = ContingencyTable(*[int(v) for v in rng.integers(0, 20, 4)])
    c = csi(t)
    h = hss(t)
    if c is not None:
        assert 0.0 <= c <= 1.0
    if h is not None:
        assert -1.0 <= h <= 1.0


def test_report_csv_layout():
    frames = [
        {"mse": 1.0, "mae": 2.0, "ssim": 0.5, "psnr": 30.0, "csi_0.5": 0.25, "hss_0.5": None}
    ]
    overall = {"mse": 1.0, "mae": 2.0, "ssim": 0.5, "psnr": 30.0, "csi_0.5": 0.5, "hss_0.5": 0.1}
    rep = MetricReport(frames=frames, overall=overall, thresholds=(0.5,))
    csv = rep.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == "frame,mse,mae,ssim,psnr,csi_0.5,hss_0.5"
    assert lines[1].startswith("0,1.000000,2.000000,0.500000,30.000000,0.250000,")
    assert lines[1].endswith(",")  # absent HSS serializes as an empty cell
    assert lines[2].startswith("overall,")


def test_report_csv_without_thresholds():
    rep = MetricReport(
        frames=[{"mse": 0.0, "mae": 0.0, "ssim": 1.0, "psnr": 99.0}],
        overall={"mse": 0.0, "mae": 0.0, "ssim": 1.0, "psnr": 99.0},
    )
    assert rep.header() == "frame,mse,mae,ssim,psnr"
