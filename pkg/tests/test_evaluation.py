import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from docseg.config import Config, run_pipeline
from docseg.errors import ConfigError, GeometryError
from docseg.evaluation import (CATEGORIES, GroundTruth, SyntheticSpec, benchmark,
                               category_summary, fold_split, generate_synthetic, grid_points,
                               kfold_tune, score, standard_corpus, table1_report)
from docseg.imaging import BlockLabel, LabelMap, LumaImage, RasterImage, to_luminance
from docseg.result import SegmentationResult


def _result(labels, b=8, wall=0.0):
    labels = np.asarray(labels, np.uint8)
    r, c = labels.shape
    return SegmentationResult("x", LabelMap(r, c, b, labels), None, {"total": wall})


def test_generator_deterministic():
    s = SyntheticSpec("double_column", True, seed=7)
    a, ta = generate_synthetic(s)
    b, tb = generate_synthetic(s)
    assert np.array_equal(a.data, b.data) and np.array_equal(ta.pixels, tb.pixels)
    c, _ = generate_synthetic(SyntheticSpec("double_column", True, seed=8))
    assert not np.array_equal(a.data, c.data)


@pytest.mark.parametrize("seed", range(5))
def test_no_figures_no_picture_truth(seed):
    _, t = generate_synthetic(SyntheticSpec(with_figures=False, seed=seed))
    assert not (t.pixels == BlockLabel.PICTURE).any()
    assert (t.pixels == BlockLabel.TEXT).any()


@pytest.mark.parametrize("seed", range(5))
def test_figures_present(seed):
    _, t = generate_synthetic(SyntheticSpec(with_figures=True, seed=seed))
    assert (t.pixels == BlockLabel.PICTURE).any()


def test_double_column_gutter():
    _, t = generate_synthetic(SyntheticSpec("double_column", seed=1))
    (x0, _, w0, _), (x1, _, _, _) = t.columns
    assert x1 - (x0 + w0) >= 32
    gutter = t.pixels[:, x0 + w0: x1]
    assert (gutter == BlockLabel.BACKGROUND).all()


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["single_column", "double_column"]), st.booleans(),
       st.integers(64, 200), st.integers(64, 200), st.integers(0, 1000))
def test_truth_covers_page(layout, figs, w, h, seed):
    spec = SyntheticSpec(layout, figs, w, h, seed=seed)
    try:
        img, t = generate_synthetic(spec)
    except ConfigError:
        assert layout == "double_column" or w < 80 or h < 80
        return
    assert t.pixels.shape == img.data.shape == (h, w)
    assert np.isin(t.pixels, [0, 1, 3]).all()


def test_spec_validation():
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(width=32))
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(text_contrast=8))
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(layout="triple"))


def test_truth_block_majority():
    px = np.zeros((16, 16), np.uint8)
    px[:8, :8] = 1
    px[:3, 8:] = 3  # 24 of 64 pixels
    assert GroundTruth(px).blocks(8).tolist() == [[1, 0], [0, 0]]
    px[:, :] = 0
    px[:8, :4] = 3  # tie 32/32 -> lower code
    assert GroundTruth(px).blocks(8)[0, 0] == 0


def test_score_identity():
    lab = np.random.default_rng(0).choice([0, 1, 3], (8, 8)).astype(np.uint8)
    truth = GroundTruth(np.repeat(np.repeat(lab, 8, 0), 8, 1))
    m = score(_result(lab), truth)
    assert (m.accuracy, m.false_positive, m.per_class_fp) == (100.0, 0.0, 0.0)


def test_score_one_wrong():
    lab = np.zeros((8, 8), np.uint8)
    truth = GroundTruth(np.zeros((64, 64), np.uint8))
    lab[3, 5] = BlockLabel.TEXT
    m = score(_result(lab), truth)
    assert m.accuracy == 98.4375 and m.false_positive == 1.5625
    assert m.per_class_fp == pytest.approx(100 / 64)


def test_table_convention():
    # reference pairing: 94.33 accuracy goes with 5.67 false positive
    assert 100 - 94.33 == pytest.approx(5.67, abs=1e-9)
    lab = np.zeros((300, 1), np.uint8)
    lab[:17] = 1
    m = score(_result(lab, 1), GroundTruth(np.zeros((300, 1), np.uint8)))
    assert round(m.accuracy, 2) == 94.33 and round(m.false_positive, 2) == 5.67


def test_graphics_policy():
    lab = np.full((2, 2), BlockLabel.GRAPHICS, np.uint8)
    truth = GroundTruth(np.full((16, 16), BlockLabel.TEXT, np.uint8))
    assert score(_result(lab), truth).accuracy == 0
    m = score(_result(lab), truth, include_graphics=True)
    assert m.accuracy == 100 and m.graphics_as == "text"
    pic = GroundTruth(np.full((16, 16), BlockLabel.PICTURE, np.uint8))
    assert score(_result(lab), pic).accuracy == 100


def test_score_geometry_mismatch():
    with pytest.raises(GeometryError):
        score(_result(np.zeros((2, 2))), GroundTruth(np.zeros((24, 16), np.uint8)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_score_properties(seed):
    rng = np.random.default_rng(seed)
    lab = rng.choice([0, 1, 2, 3], (6, 7)).astype(np.uint8)
    tl = rng.choice([0, 1, 3], (6, 7)).astype(np.uint8)
    truth = GroundTruth(np.repeat(np.repeat(tl, 4, 0), 4, 1))
    m = score(_result(lab, 4), truth)
    assert abs(m.accuracy + m.false_positive - 100) <= 1e-9
    assert 0 <= m.accuracy <= 100 and 0 <= m.per_class_fp <= 100
    perm = rng.permutation(lab.size)
    lab2, tl2 = lab.ravel()[perm].reshape(6, 7), tl.ravel()[perm].reshape(6, 7)
    m2 = score(_result(lab2, 4), GroundTruth(np.repeat(np.repeat(tl2, 4, 0), 4, 1)))
    assert m2.accuracy == m.accuracy and m2.per_class_fp == m.per_class_fp


def test_fold_split():
    folds = fold_split(23, 10, seed=3)
    allv = np.concatenate(folds)
    assert sorted(allv.tolist()) == list(range(23))
    assert [len(f) for f in fold_split(5, 5)] == [1] * 5
    with pytest.raises(ConfigError):
        fold_split(4, 10)


def _small_corpus(n=4, figs=True):
    out = []
    for i in range(n):
        img, t = generate_synthetic(SyntheticSpec(with_figures=figs and i % 2 == 0,
                                                  width=128, height=160, seed=i))
        out.append((img, t))
    return out


def test_kfold_loo_and_coverage():
    corpus = _small_corpus(4)
    res = kfold_tune(corpus, {"hist.mode_t": [0.05]}, k=4, pipeline="hist")
    assert [len(f["validation_pages"]) for f in res.folds] == [1] * 4
    pages = sorted(p for f in res.folds for p in f["validation_pages"])
    assert pages == [0, 1, 2, 3]
    assert res.best == {"hist.mode_t": 0.05}
    direct = [score(run_pipeline("hist", to_luminance(img)), t).accuracy for img, t in corpus]
    assert res.cv_mean == pytest.approx(np.mean(direct))
    assert res.page_accuracy == pytest.approx(direct)


def test_kfold_blank_corpus():
    blank = [(RasterImage(np.full((64, 64), 255, np.uint8)),
              GroundTruth(np.zeros((64, 64), np.uint8)))] * 3
    for pipe, grid in (("ac", {"ac.t1": [20, 50], "ac.t2": [70]}),
                       ("hist", {"hist.mode_t": [0.03, 0.05]})):
        res = kfold_tune(blank, grid, k=3, pipeline=pipe)
        assert res.cv_mean == 100.0
        # every point ties, so the lexicographically smallest wins
        assert res.best == grid_points(grid)[0]


def test_kfold_errors():
    with pytest.raises(ConfigError):
        kfold_tune(_small_corpus(2), {"hist.mode_t": [0.05]}, k=3)
    with pytest.raises(ConfigError):
        kfold_tune(_small_corpus(2), {"nope": [1]}, k=2)


def test_grid_points_order():
    pts = grid_points({"b": [2, 1], "a": [0.5]})
    assert pts == [{"a": 0.5, "b": 1}, {"a": 0.5, "b": 2}]


def test_kfold_worker_independent():
    corpus = _small_corpus(4)
    grid = {"hist.a_window": [2, 4]}
    a = kfold_tune(corpus, grid, k=2, pipeline="hist", workers=1)
    b = kfold_tune(corpus, grid, k=2, pipeline="hist", workers=3)
    assert a.to_dict() == b.to_dict()


def test_benchmark_blank_page():
    rep = benchmark([LumaImage(np.full((32, 32), 255, np.uint8))], repetitions=3)
    for name in ("ac", "hist", "ac+refine"):
        assert rep["pipelines"][name]["median_seconds"] > 0
    assert "hist_faster_than_ac" in rep and "note" in rep
    with pytest.raises(ConfigError):
        benchmark([], repetitions=2)


def test_refine_costs_at_least_as_much():
    img, _ = generate_synthetic(SyntheticSpec("single_column", True, seed=2))
    rep = benchmark([img], repetitions=5, pipelines=("ac",))
    p = rep["pipelines"]
    assert p["ac+refine"]["median_seconds"] >= p["ac"]["median_seconds"]


def test_standard_corpus_split_and_table():
    corpus = standard_corpus(seed=1, split={c: 1 for c in CATEGORIES}, width=128, height=160)
    assert [p.category for p in corpus] == list(CATEGORIES)
    summary = {}
    for pipe in ("ac", "hist"):
        accs, times = [], []
        for p in corpus:
            r = run_pipeline(pipe, p.luma, Config())
            accs.append(score(r, p.truth).accuracy)
            times.append(r.wall_time)
        summary[pipe] = category_summary(corpus, accs, times)
    text = table1_report(summary)
    lines = text.splitlines()
    assert lines[2].startswith("Accuracy") and lines[3].startswith("False positive")
    assert lines[4].startswith("Time (seconds)")
    assert all(len(line.split()) >= 9 for line in lines[2:4])
