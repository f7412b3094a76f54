import itertools
import math
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tempaction.evaluation import evaluate_split, leave_one_group_out
from tempaction.media_io import DatasetManifest, ManifestEntry
from tempaction.metrics import (
    EvalReport,
    average_precision,
    improvement_split,
    mean_average_precision,
    mean_class_accuracy,
    mtsvf,
    tsvf,
)
from tempaction.svm import LinearModel, predict_scores, solve_dual, train_one_vs_all


def separable(n=60, d=5, k=3, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, d)) * 6
    y = np.arange(n) % k
    return centers[y] + rng.standard_normal((n, d)) * 0.5, [f"c{i}" for i in y]


# -- SVM ----------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_svm_separable_training_accuracy(seed):
    x, y = separable(seed=seed)
    model = train_one_vs_all(x, y, C=100.0)
    _, pred = predict_scores(model, x)
    assert pred == y
    for res in model.diagnostics.values():
        assert res.gap <= 1e-4


def test_dual_history_non_decreasing():
    x, y = separable(40, 8, 2, seed=3)
    yy = np.where(np.array(y) == "c0", 1.0, -1.0)
    res = solve_dual(x @ x.T + 1.0, yy, C=1.0, tol=1e-8)
    assert np.all(np.diff(res.dual_history) >= -1e-9)
    assert np.all((res.alpha >= 0) & (res.alpha <= 1.0))
    assert res.gap <= 1e-8


def test_svm_matches_primal_kkt():
    # the primal weights from the dual solve satisfy the margin conditions
    x, y = separable(30, 3, 2, seed=1)
    model = train_one_vs_all(x, y, C=100.0, tol=1e-9)
    yy = np.where(np.array(y) == "c0", 1.0, -1.0)
    margins = yy * (x @ model.weights[0] + model.biases[0])
    alpha = model.diagnostics["c0"].alpha
    assert np.all(margins[alpha == 0] >= 1 - 1e-4)
    sv = (alpha > 1e-8) & (alpha < 100 - 1e-8)
    np.testing.assert_allclose(margins[sv], 1.0, atol=1e-3)


def test_svm_errors_and_roundtrip():
    x, y = separable(12, 4, 2)
    with pytest.raises(ValueError):
        train_one_vs_all(x, ["a"] * 12)
    with pytest.raises(ValueError):
        train_one_vs_all(x, y[:-1])
    model = train_one_vs_all(x, y)
    back = LinearModel.from_bytes(model.to_bytes())
    assert back.classes == model.classes and back.C == 100.0
    with pytest.raises(ValueError, match="dimension"):
        predict_scores(model, np.zeros((1, 3)))


def test_svm_deterministic():
    x, y = separable(30, 4, 3, seed=2)
    a = train_one_vs_all(x, y, seed=1).to_bytes()
    b = train_one_vs_all(x, y, seed=1).to_bytes()
    assert a == b


# -- metrics ----------------------------------------------------------------


def brute_force_ap(scores, pos):
    # enumerate every cutoff rank in the same stable descending order
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    terms, hits = [], 0
    for r, i in enumerate(order, start=1):
        if pos[i]:
            hits += 1
            terms.append(hits / r)
    return math.fsum(terms) / sum(pos)


def test_ap_brute_force_1000_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        scores = rng.integers(0, 8, n).astype(float)  # plenty of ties
        pos = rng.random(n) < 0.4
        if not pos.any():
            pos[rng.integers(n)] = True
        assert average_precision(scores, pos) == brute_force_ap(list(scores), list(pos))


def test_ap_worked_example():
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(0.8333333333333333, abs=1e-15)
    with pytest.raises(ValueError):
        average_precision([1.0], [0])


def test_map():
    m, aps = mean_average_precision([[0.9, 0.1], [0.1, 0.9]], [[1, 0], [0, 1]])
    assert m == 1.0 and aps == [1.0, 1.0]


def test_mean_class_accuracy_hand_case():
    macc, per = mean_class_accuracy(["a", "a", "b", "a"], ["a", "a", "b", "b"])
    assert macc == 0.75
    assert per == {"a": 1.0, "b": 0.5}
    with pytest.raises(ValueError):
        mean_class_accuracy([], [])


def test_tsvf_cases():
    assert tsvf([5, 5, 5]) == 0.0
    assert abs(tsvf([2, 4]) - 1 / 3) <= 1e-12
    with pytest.raises(ValueError):
        tsvf([3])
    with pytest.raises(ValueError):
        tsvf([1, 0])


def test_tsvf_scale_invariance():
    rng = np.random.default_rng(0)
    d = rng.uniform(10, 100, 20)
    base = tsvf(d)
    for c in rng.uniform(0.01, 100, 100):
        assert abs(tsvf(d * c) - base) <= 1e-12


@given(st.lists(st.integers(1, 500), min_size=2, max_size=30))
def test_tsvf_non_negative(d):
    assert tsvf(d) >= 0


def manifest(durations):
    entries = [
        ManifestEntry(f"{c}{i}", c, "g0", d)
        for c, ds in durations.items()
        for i, d in enumerate(ds)
    ]
    return DatasetManifest(entries, {"metric": "accuracy"})


def test_mtsvf_and_improvement_split():
    m = manifest({"a": [2, 4], "b": [5, 5], "c": [1, 3]})
    value, per = mtsvf(m)
    assert per == {"a": pytest.approx(1 / 3), "b": 0.0, "c": pytest.approx(0.5)}
    assert value == pytest.approx((1 / 3 + 0.5) / 3)
    base = EvalReport(["a", "b", "c"], {"a": 0.5, "b": 0.9, "c": 0.2}, {"a": 0, "b": 0, "c": 0})
    meth = EvalReport(["a", "b", "c"], {"a": 0.7, "b": 0.8, "c": 0.2}, {"a": 0, "b": 0, "c": 0})
    split = improvement_split(base, meth, m)
    assert split["improved"] == ["a", "c"] and split["hurt"] == ["b"]
    assert split["mtsvf_improved"] == pytest.approx((1 / 3 + 0.5) / 2)
    assert split["mtsvf_hurt"] == 0.0
    assert split["delta"]["a"] == pytest.approx(0.2)
    split = improvement_split(base, base, m)
    assert split["n_hurt"] == 0 and split["mtsvf_hurt"] is None


def test_report_roundtrip():
    r = EvalReport(["a", "b"], {"a": 1.0, "b": 0.25}, {"a": 0.5, "b": 1 / 3}, name="x",
                   folds=[{"group": "g0", "n_test": 4, "n_correct": 3}],
                   delta={"a": 0.1}, tsvf={"a": 0.2, "b": 0.0}, extra={"dim": 12})
    back = EvalReport.parse(r.format())
    assert back.per_class_ap == r.per_class_ap
    assert back.delta == r.delta and back.tsvf == r.tsvf
    assert back.folds == r.folds
    assert back.extra == {"dim": "12"}
    assert back.format() == r.format()


# -- protocols ---------------------------------------------------------------


def test_logo_pools_all_held_out_clips():
    x, y = separable(30, 4, 3, seed=4)
    groups = [f"g{(i // 3) % 3}" for i in range(30)]
    rep = leave_one_group_out(x, y, groups)
    assert [f["group"] for f in rep.folds] == ["g0", "g1", "g2"]
    assert sum(f["n_test"] for f in rep.folds) == 30
    assert rep.mean_accuracy == 1.0
    assert rep.mean_ap == 1.0


def test_logo_missing_class_scores_zero(caplog):
    x, y = separable(12, 3, 3, seed=5)
    y = list(y)
    groups = ["g0" if lab == "c2" else f"g{i % 2}" for i, lab in enumerate(y)]
    with caplog.at_level(logging.WARNING):
        rep = leave_one_group_out(x, y, groups)
    assert "no training clips" in caplog.text
    assert rep.per_class_accuracy["c2"] == 0.0


def test_logo_needs_two_groups():
    x, y = separable(6, 2, 2)
    with pytest.raises(ValueError):
        leave_one_group_out(x, y, ["g"] * 6)


def test_evaluate_split_scores_test_only():
    x, y = separable(20, 3, 2, seed=6)
    rep = evaluate_split(x, y, range(10), range(10, 20))
    assert rep.folds[0]["n_test"] == 10
    assert rep.mean_accuracy == 1.0
    with pytest.raises(ValueError, match="overlap"):
        evaluate_split(x, y, range(11), range(10, 20))


def test_brute_force_helper_against_permutations():
    # the brute-force oracle itself: AP of a ranking equals the mean over
    # positives of precision at their rank, checked on all orders of 4 items
    for perm in itertools.permutations(range(4)):
        scores = [4 - p for p in perm]
        pos = [True, False, True, False]
        ranks = sorted(perm[i] + 1 for i in (0, 2))
        expect = (1 / ranks[0] + 2 / ranks[1]) / 2
        assert brute_force_ap(scores, pos) == pytest.approx(expect)
