import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcrpnet import metrics as M


def counting_prf(pred, gt, t, beta2=0.3):
    tp = fp = fn = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        hit = p >= t
        tp += hit and g
        fp += hit and not g
        fn += (not hit) and g
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn)
    f = (1 + beta2) * prec * rec / (beta2 * prec + rec) if prec + rec else 0.0
    return prec, rec, f


def pixel_e_measure(pred, gt, t):
    fm = (pred >= t).astype(float)
    g = gt.astype(float)
    n = g.size
    if g.sum() == 0:
        enhanced = 1 - fm
    elif g.sum() == n:
        enhanced = fm
    else:
        a, b = fm - fm.mean(), g - g.mean()
        align = 2 * a * b / (a * a + b * b + np.spacing(1.0))
        enhanced = (align + 1) ** 2 / 4
    return enhanced.sum() / (n - 1 + np.spacing(1.0))


def test_beta_squared_is_pinned():
    assert M.BETA2 == 0.3


def test_three_by_three_counting_case():
    gt = np.zeros((3, 3), dtype=bool)
    gt[1, 1] = True
    pred = np.full((3, 3), 0.1)
    pred[1, 1] = 0.9
    for t in (0.5, 0.05, 0.95, 0.1):
        assert M.f_measure(pred, gt, t) == pytest.approx(counting_prf(pred, gt, t), abs=0)
    assert M.f_measure(pred, gt, 0.5) == (1.0, 1.0, 1.0)
    p, r, f = M.f_measure(pred, gt, 0.05)
    assert (p, r) == (1 / 9, 1.0)
    assert f == pytest.approx(1.3 * (1 / 9) / (0.3 / 9 + 1), rel=1e-15)


def half_map(h=8, w=8):
    gt = np.zeros((h, w))
    gt[:, : w // 2] = 1
    return gt


def test_perfect_prediction():
    gt = half_map()
    s = M.image_metrics(gt, gt)
    assert s["mae"] == 0.0
    assert s["f_max"] == 1.0 and s["f_adp"] == 1.0
    assert s["s_alpha"] == pytest.approx(1.0, abs=1e-12)
    assert s["e_max"] == pytest.approx(1.0, abs=0.02)


def test_inverted_prediction():
    gt = half_map()
    s = M.image_metrics(1 - gt, gt)
    assert s["mae"] == 1.0
    # object term is 0; the region term keeps a little credit for flat quadrants
    assert s["s_alpha"] < 0.05
    assert M.f_measure(1 - gt, gt, 0.5)[2] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_e_measure_matches_pixel_oracle(seed):
    rng = np.random.default_rng(seed)
    gt = rng.random((9, 7)) < 0.3
    pred = rng.random((9, 7))
    for t in (0.0, 0.2, 0.5, 0.77, 1.0):
        assert M.e_measure(pred, gt, t) == pytest.approx(pixel_e_measure(pred, gt, t), rel=1e-12)


def test_e_measure_degenerate_ground_truth():
    pred = np.random.default_rng(0).random((5, 5))
    for gt in (np.zeros((5, 5)), np.ones((5, 5))):
        for t in (0.3, 0.8):
            assert M.e_measure(pred, gt, t) == pytest.approx(pixel_e_measure(pred, gt > 0.5, t), rel=1e-12)


def test_empty_gt_f_convention():
    gt = np.zeros((4, 4))
    assert M.f_measure(np.zeros((4, 4)), gt, 0.5)[2] == 1.0
    pred = np.zeros((4, 4))
    pred[0, 0] = 0.9
    assert M.f_measure(pred, gt, 0.5)[2] == 0.0


def test_adaptive_threshold():
    assert M.adaptive_threshold(np.full((2, 2), 0.2)) == pytest.approx(0.4)
    assert M.adaptive_threshold(np.full((2, 2), 0.7)) == 1.0


def test_thresholds_are_k_over_255():
    np.testing.assert_allclose(M.THRESHOLDS, np.arange(256) / 255)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_random_pair_properties(seed):
    rng = np.random.default_rng(seed)
    h, w = (int(v) for v in rng.integers(2, 12, size=2))
    gt = rng.random((h, w)) < rng.uniform(0.05, 0.9)
    pred = np.clip(rng.random((h, w)) * 0.6 + gt * rng.uniform(0, 0.5), 0, 1)
    s = M.image_metrics(pred, gt)
    assert s["f_max"] >= s["f_mean"]
    assert s["e_max"] >= s["e_mean"]
    n = h * w
    for k, v in s.items():
        # enhanced alignment divides by n - 1, so it can exceed 1 by n / (n - 1)
        top = n / (n - 1) if k.startswith("e_") else 1.0
        assert 0.0 <= v <= top + 1e-12
    _, recall, _ = M.pr_curve(pred, gt)
    assert np.all(np.diff(recall) <= 0)


def test_s_measure_alpha_default():
    assert M.ALPHA == 0.5


def test_s_measure_region_weights_cover_image():
    gt = np.zeros((6, 10), dtype=bool)
    gt[1:3, 2:5] = True
    pred = gt.astype(float)
    assert M.s_measure(pred, gt) == pytest.approx(1.0, abs=1e-12)
    noisy = np.clip(pred + np.random.default_rng(0).random(pred.shape) * 0.3, 0, 1)
    assert 0 < M.s_measure(noisy, gt) < 1


def test_shape_and_range_validation():
    with pytest.raises(ValueError):
        M.mae(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        M.mae(np.full((2, 2), 1.5), np.zeros((2, 2)))


def test_evaluator_averages_per_image_oracles():
    rng = np.random.default_rng(3)
    pairs = []
    for shape in ((8, 8), (6, 10), (12, 5)):
        gt = rng.random(shape) < 0.35
        pairs.append((rng.random(shape), gt))
    ev = M.Evaluator()
    for p, g in pairs:
        ev.add(p, g)
    rep = ev.report()
    per = [M.image_metrics(p, g) for p, g in pairs]
    for key in ("f_adp", "e_adp", "s_alpha", "mae"):
        assert getattr(rep, key) == pytest.approx(np.mean([d[key] for d in per]), rel=1e-12)
    f_curves = np.mean([M.pr_curve(p, g)[2] for p, g in pairs], axis=0)
    e_curves = np.mean([M.e_curve(p, g) for p, g in pairs], axis=0)
    assert rep.f_max == pytest.approx(f_curves.max(), rel=1e-12)
    assert rep.f_mean == pytest.approx(f_curves.mean(), rel=1e-12)
    assert rep.e_max == pytest.approx(e_curves.max(), rel=1e-12)
    assert rep.num_images == 3 and len(ev) == 3


def test_report_serialisation_round_trip():
    ev = M.Evaluator()
    gt = half_map()
    ev.add(np.clip(gt * 0.8 + 0.1, 0, 1), gt)
    rep = ev.report()
    parsed = M.EvalReport.parse_text(rep.to_text())
    for k in M.METRIC_KEYS:
        assert parsed[k] == pytest.approx(getattr(rep, k), abs=1e-6)
    assert rep.csv_header().split(",")[:8] == list(M.METRIC_KEYS)
    assert len(rep.csv_row().split(",")) == 9
    assert len(rep.curves_csv().strip().splitlines()) == 257


def test_empty_evaluator():
    with pytest.raises(ValueError):
        M.Evaluator().report()
