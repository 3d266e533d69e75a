import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import metric_fixtures, quantized
from bistream_sod import imageio, metrics as M

FIXTURES = metric_fixtures()


def as_lists(s, gt):
    return oracles.to_lists(s), oracles.to_lists(gt)


# -- MAE -----------------------------------------------------------------------


def test_mae_edge_cases(rng):
    gt = (rng.uniform(size=(6, 7)) > 0.5).astype(float)
    assert M.mae(gt, gt) == 0.0
    assert M.mae(1 - gt, gt) == 1.0
    assert M.mae(np.full_like(gt, 0.5), gt) == 0.5


def test_mae_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        M.mae(np.zeros((2, 2)), np.zeros((2, 3)))


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_mae_matches_oracle(name):
    s, gt = FIXTURES[name]
    assert abs(M.mae(s, gt) - oracles.brute_mae(*as_lists(s, gt))) < 1e-12


# -- PR / F --------------------------------------------------------------------


def test_f_measure_values():
    assert M.f_measure(1.0, 1.0) == 1.0
    assert M.f_measure(0.5, 0.5) == pytest.approx(0.5, abs=1e-15)
    assert M.f_measure(0.8, 0.4) == pytest.approx(0.65, abs=1e-12)
    assert M.f_measure(0.0, 0.0) == 0.0
    arr = M.f_measure(np.array([0.0, 0.8]), np.array([0.0, 0.4]))
    assert arr[0] == 0.0 and abs(arr[1] - 0.65) < 1e-12


def test_perfect_prediction_curve():
    s, gt = FIXTURES["perfect"]
    p, r = M.pr_curve([(s, gt)])
    assert p.shape == r.shape == (256,)
    assert np.all(p[1:] == 1.0) and np.all(r[1:] == 1.0)
    assert r[0] == 1.0 and p[0] == gt.mean()


def test_all_zero_prediction_has_no_recall():
    gt = FIXTURES["perfect"][1]
    p, r = M.pr_curve([(np.zeros_like(gt), gt)])
    assert np.all(r[1:] == 0.0) and np.all(p[1:] == 0.0)
    assert r[0] == 1.0


def test_counting_case_4x4():
    # 2 TP, 2 FP, 2 FN at t=128
    gt = np.zeros((4, 4))
    gt[0, :4] = 1
    s = np.zeros((4, 4))
    s[0, :2] = 0.9
    s[1, :2] = 0.9
    p, r = M.precision_recall(s, gt)
    assert p[128] == 0.5 and r[128] == 0.5


def test_empty_mask_recall_is_zero():
    p, r = M.precision_recall(np.full((3, 3), 0.7), np.zeros((3, 3)))
    assert np.all(r == 0.0) and np.all(p == 0.0)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_pr_matches_counting_oracle(name):
    s, gt = FIXTURES[name]
    p, r = M.precision_recall(s, gt)
    ls, lg = as_lists(s, gt)
    for t in range(256):
        bp, br = oracles.brute_pr(ls, lg, t)
        assert abs(p[t] - bp) < 1e-12 and abs(r[t] - br) < 1e-12


def test_max_avg_f_two_image_oracle():
    pairs = [FIXTURES["mixed_rect"], FIXTURES["mixed_blob"]]
    mx, av = M.max_avg_f(pairs)
    bmx, bav = oracles.brute_max_avg_f([as_lists(s, g) for s, g in pairs])
    assert abs(mx - bmx) < 1e-6 and abs(av - bav) < 1e-6


def test_max_avg_f_perfect_and_wrong():
    s, gt = FIXTURES["perfect"]
    mx, av = M.max_avg_f([(s, gt)])
    assert mx == 1.0
    # t = 0 marks every pixel positive; the other 255 thresholds score 1
    f0 = M.f_measure(gt.mean(), 1.0)
    assert abs(av - (255 + f0) / 256) < 1e-12
    inv = M.max_avg_f([FIXTURES["inverted"]])
    # only t = 0 can score on an inverted map
    assert inv[0] == pytest.approx(f0, abs=1e-12)
    assert M.max_avg_f([(np.zeros_like(gt), gt)])[0] == pytest.approx(f0, abs=1e-12)


def test_pr_curve_empty():
    with pytest.raises(ValueError):
        M.pr_curve([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_max_f_dominates_avg_f(seed, n):
    r = np.random.Generator(np.random.PCG64(seed))
    pairs = [(quantized(r.uniform(size=(6, 6))), (r.uniform(size=(6, 6)) > 0.6).astype(float)) for _ in range(n)]
    mx, av = M.max_avg_f(pairs)
    assert 0.0 <= av <= mx <= 1.0
    p, rec = M.pr_curve(pairs)
    assert np.all(np.diff(rec) <= 1e-15)
    assert np.all((p >= 0) & (p <= 1) & (rec >= 0) & (rec <= 1))


# -- weighted F ------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_weighted_f_matches_oracle(name):
    s, gt = FIXTURES[name]
    assert abs(M.weighted_f(s, gt) - oracles.brute_weighted_f(*as_lists(s, gt))) < 1e-6


# values produced by tests/oracles.py, pinned so an oracle regression is caught too
FROZEN = {
    "mixed_rect": (0.6264200864147695, 0.7145226672806565),
    "mixed_blob": (0.638727160541243, 0.7255177640892952),
    "noise_rect": (0.4260100248286104, 0.28927883591693104),
    "constant_half": (0.4013871681873805, 0.39999999680000003),
}


@pytest.mark.parametrize("name", sorted(FROZEN))
def test_frozen_metric_values(name):
    wf, sm = FROZEN[name]
    assert abs(M.weighted_f(*FIXTURES[name]) - wf) < 1e-6
    assert abs(M.s_measure(*FIXTURES[name]) - sm) < 1e-6


def test_s_measure_constant_half_by_hand():
    # both object scores are 2*0.5/(0.25+1) = 0.8; no covariance, so every quadrant scores 0
    assert M.s_measure(*FIXTURES["constant_half"]) == pytest.approx(0.4, abs=1e-7)


def test_weighted_f_zero_prediction_interior_block():
    gt = np.zeros((8, 8))
    gt[3:5, 3:5] = 1
    assert abs(M.weighted_f(np.zeros_like(gt), gt)) < 1e-9


def test_weighted_f_empty_mask_rule():
    gt = np.zeros((5, 5))
    assert M.weighted_f(np.zeros_like(gt), gt) == 1.0
    s = np.zeros_like(gt)
    s[2, 2] = 0.1
    assert M.weighted_f(s, gt) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weighted_f_binary_is_one_only_when_equal(seed):
    r = np.random.Generator(np.random.PCG64(seed))
    gt = (r.uniform(size=(7, 7)) > 0.5).astype(float)
    if gt.sum() == 0:
        gt[3, 3] = 1
    assert M.weighted_f(gt, gt) == pytest.approx(1.0, abs=1e-12)
    s = gt.copy()
    i, j = r.integers(7, size=2)
    s[i, j] = 1 - s[i, j]
    assert M.weighted_f(s, gt) < 1.0 - 1e-6


# -- S-measure -------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_s_measure_matches_oracle(name):
    s, gt = FIXTURES[name]
    assert abs(M.s_measure(s, gt) - oracles.brute_s_measure(*as_lists(s, gt))) < 1e-6


def test_s_measure_edge_cases():
    bg = np.zeros((6, 6))
    assert M.s_measure(np.zeros((6, 6)), bg) == 1.0
    assert M.s_measure(np.ones((6, 6)), bg) == 0.0
    assert M.s_measure(np.full((6, 6), 0.25), np.ones((6, 6))) == 0.25
    s, gt = FIXTURES["perfect"]
    assert M.s_measure(s, gt) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_s_measure_random_matches_oracle(seed):
    r = np.random.Generator(np.random.PCG64(seed))
    h, w = r.integers(3, 9, size=2)
    s = quantized(r.uniform(size=(h, w)))
    gt = (r.uniform(size=(h, w)) > 0.5).astype(float)
    value = M.s_measure(s, gt)
    assert 0.0 <= value <= 1.0
    assert abs(value - oracles.brute_s_measure(*as_lists(s, gt))) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_all_metrics_bounded(seed):
    r = np.random.Generator(np.random.PCG64(seed))
    s = quantized(r.uniform(size=(6, 8)))
    gt = (r.uniform(size=(6, 8)) > r.uniform()).astype(float)
    for fn in (M.mae, M.weighted_f, M.s_measure):
        assert 0.0 <= fn(s, gt) <= 1.0


# -- dataset evaluation ------------------------------------------------------------


def _write_pair_dirs(tmp_path, pairs):
    pred, gt = tmp_path / "pred", tmp_path / "gt"
    pred.mkdir()
    gt.mkdir()
    for name, s, g in pairs:
        imageio.write_gray(pred / f"{name}.pgm", imageio.from_saliency(s))
        imageio.write_gray(gt / f"{name}.pgm", (g * 255).astype(np.uint8))
    return pred, gt


def test_dataset_of_perfect_predictions(tmp_path):
    gt = FIXTURES["perfect"][1]
    pred, gtd = _write_pair_dirs(tmp_path, [(f"im{i}", gt, gt) for i in range(3)])
    rep = M.evaluate_dataset(pred, gtd)
    assert rep.mae == 0.0 and rep.max_f == 1.0
    assert rep.s_measure == pytest.approx(1.0, abs=1e-6)
    assert len(rep.per_image) == 3 and rep.errors == []


def test_single_pair_equals_direct_calls(tmp_path):
    s, gt = FIXTURES["mixed_blob"]
    pred, gtd = _write_pair_dirs(tmp_path, [("only", s, gt)])
    rep = M.evaluate_dataset(pred, gtd)
    img = rep.per_image[0]
    assert img.mae == M.mae(s, gt)
    assert img.weighted_f == M.weighted_f(s, gt)
    assert img.s_measure == M.s_measure(s, gt)
    assert (rep.max_f, rep.avg_f) == M.max_avg_f([(s, gt)])


def test_three_pair_fixture_against_oracles(tmp_path):
    names = ["mixed_blob", "mixed_rect", "noise_rect"]
    pred, gtd = _write_pair_dirs(tmp_path, [(n, *FIXTURES[n]) for n in names])
    rep = M.evaluate_dataset(pred, gtd)
    assert [m.name for m in rep.per_image] == names
    lists = [as_lists(*FIXTURES[n]) for n in names]
    for m, (ls, lg) in zip(rep.per_image, lists):
        assert abs(m.mae - oracles.brute_mae(ls, lg)) < 1e-6
        assert abs(m.weighted_f - oracles.brute_weighted_f(ls, lg)) < 1e-6
        assert abs(m.s_measure - oracles.brute_s_measure(ls, lg)) < 1e-6
    bmx, bav = oracles.brute_max_avg_f(lists)
    assert abs(rep.max_f - bmx) < 1e-6 and abs(rep.avg_f - bav) < 1e-6
    assert abs(rep.mae - sum(oracles.brute_mae(*p) for p in lists) / 3) < 1e-6


def test_missing_counterparts_are_reported(tmp_path):
    s, gt = FIXTURES["mixed_rect"]
    pred, gtd = _write_pair_dirs(tmp_path, [("a", s, gt)])
    imageio.write_gray(pred / "extra.pgm", imageio.from_saliency(s))
    imageio.write_gray(gtd / "lonely.pgm", (gt * 255).astype(np.uint8))
    (pred / "broken.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
    (gtd / "broken.pgm").write_bytes(imageio.encode_pgm(np.zeros((2, 2), np.uint8)))
    rep = M.evaluate_dataset(pred, gtd)
    assert len(rep.per_image) == 1
    assert len(rep.errors) == 3
    assert any("extra" in e for e in rep.errors) and any("lonely" in e for e in rep.errors)


def test_zero_valid_pairs_fails(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    with pytest.raises(ValueError, match="no valid"):
        M.evaluate_dataset(tmp_path / "p", tmp_path / "g")


def test_worker_count_does_not_change_report(tmp_path):
    r = np.random.Generator(np.random.PCG64(3))
    pairs = [(f"p{i:02d}", quantized(r.uniform(size=(10, 12))), (r.uniform(size=(10, 12)) > 0.5).astype(float))
             for i in range(9)]
    pred, gtd = _write_pair_dirs(tmp_path, pairs)
    one = M.evaluate_dataset(pred, gtd, workers=1)
    four = M.evaluate_dataset(pred, gtd, workers=4)
    assert one.to_json() == four.to_json()
    assert one.curve_csv() == four.curve_csv()


def test_report_serialization(tmp_path):
    rep = M.evaluate_pairs([("x", *FIXTURES["mixed_rect"])])
    d = rep.to_dict()
    assert set(d) == {"aggregate", "per_image", "errors"}
    assert d["aggregate"]["n_images"] == 1
    lines = rep.curve_csv().splitlines()
    assert lines[0] == "threshold,precision,recall,f"
    assert len(lines) == 257
    t, p, r, f = lines[129].split(",")
    assert int(t) == 128
    assert math.isclose(float(f), M.f_measure(float(p), float(r)), abs_tol=1e-12)
