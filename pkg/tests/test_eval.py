import itertools

import numpy as np
import pytest

from ppgmorph.eval import (EmbeddingSet, ProbeReport, bootstrap_ci, grouped_metrics, logistic_fit,
                           logistic_objective, logistic_solve, metric_accuracy, metric_auroc, metric_f1,
                           metric_mae, metric_r2, metric_smape, multinomial_logistic_fit, pairwise_distances,
                           pool_by_subject, ridge_fit, ridge_solve, run_probe, split_subjects, stat_features,
                           stat_feature_matrix, wilcoxon_exact_distribution, wilcoxon_signed_rank)


def auroc_pairs(scores, labels):
    """Literal pair count: P(pos > neg) + 1/2 P(tie)."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        raise ValueError
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def wilcoxon_brute(a, b):
    """Two-sided p from all 2^n sign assignments of the nonzero |d| ranks."""
    from scipy.stats import rankdata
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[d != 0]
    r = rankdata(np.abs(d))
    t = r[d > 0].sum()
    totals = np.array([sum(ri for ri, s in zip(r, signs) if s) for signs in itertools.product([0, 1], repeat=len(r))])
    lo, hi = np.mean(totals <= t + 1e-9), np.mean(totals >= t - 1e-9)
    return min(1.0, 2 * min(lo, hi))


# --- metrics -----------------------------------------------------------------

def test_auroc_examples():
    assert metric_auroc([0.1, 0.9], [0, 1]) == 1.0
    assert metric_auroc([0.9, 0.1], [0, 1]) == 0.0
    assert metric_auroc([0.3] * 7, [0, 1, 0, 1, 1, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        metric_auroc([0.1, 0.2], [1, 1])


def test_auroc_matches_pair_count():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.integers(0, 5, 12) / 4  # plenty of ties
        y = rng.integers(0, 2, 12)
        if y.min() == y.max():
            continue
        assert metric_auroc(s, y) == pytest.approx(auroc_pairs(s, y), abs=1e-12)


def test_regression_metrics():
    t = np.array([1.0, -2.0, 3.5])
    assert metric_mae(t, t) == 0 and metric_smape(t, t) == 0 and metric_r2(t, t) == 1
    assert metric_mae([2, 2], [1, 3]) == 1
    assert metric_r2(np.full(3, t.mean()), t) == pytest.approx(0.0, abs=1e-15)
    # |p|+|t| = 0 pair skipped but still counted in n: 100/2 * (2/2)
    assert metric_smape([0, 2], [0, 0]) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        metric_mae([], [])


def test_classification_metrics():
    assert metric_accuracy([1, 0, 1, 1], [1, 0, 0, 1]) == 0.75
    # tp=2, predicted 3, actual 2 -> 4/5
    assert metric_f1([1, 0, 1, 1], [1, 0, 0, 1]) == pytest.approx(0.8)
    assert metric_f1([0, 0], [1, 1]) == 0.0


# --- stat features, pooling, splits -------------------------------------------

def test_stat_features():
    np.testing.assert_array_equal(stat_features([1, 2, 3, 4, 5]), [3, 3, 5, 1, 2, 3, 4])
    assert np.all(stat_features(np.full(9, 2.5)) == 2.5)
    x = np.random.default_rng(1).normal(size=50)
    np.testing.assert_array_equal(stat_features(x), stat_features(x[::-1]))
    np.testing.assert_allclose(stat_feature_matrix(np.stack([x, x[::-1]]))[1], stat_features(x))


def test_pooling():
    es = EmbeddingSet([[0, 0], [2, 2], [5, 5], [5, 5]], ["a", "a", "b", "b"], labels=[1, 1, 0, 0])
    p = pool_by_subject(es)
    np.testing.assert_array_equal(p.matrix, [[1, 1], [5, 5]])
    assert p.subject_ids.tolist() == ["a", "b"] and p.labels.tolist() == [1, 0]
    with pytest.raises(ValueError, match="conflicting"):
        pool_by_subject(EmbeddingSet([[0], [1]], ["a", "a"], labels=[0, 1]))


def test_subject_split_sizes_and_disjoint():
    ids = np.repeat([f"s{i}" for i in range(10)], 3)
    sizes = []
    members = []
    for seed in range(5):
        parts = split_subjects(ids, (0.6, 0.2, 0.2), seed)
        sets = [set(ids[p]) for p in parts]
        sizes.append([len(s) for s in sets])
        members.append(sorted(sets[2]))
        assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
        assert sum(len(p) for p in parts) == 30
    assert all(s == [6, 2, 2] for s in sizes)
    assert len({tuple(m) for m in members}) > 1
    with pytest.raises(ValueError):
        split_subjects(["a", "b"], (0.6, 0.2, 0.2))


# --- probes ------------------------------------------------------------------

def test_ridge_hand_system():
    # centred x = [-1,0,1], y = [1,2,4]: w = x'y / (x'x + alpha) = 3/3, b = 7/3 - 1
    w, b = ridge_solve([[0.0], [1.0], [2.0]], [1.0, 2.0, 4.0], alpha=1.0)
    assert w[0] == pytest.approx(1.0, abs=1e-12) and b == pytest.approx(4 / 3, abs=1e-12)


def test_ridge_limits():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    true = np.array([1.5, -2.0, 0.25])
    y = x @ true + 0.7
    m = ridge_fit(x, y, alphas=(1e-10,))
    np.testing.assert_allclose(m.weights / m.scaler.scale, true, atol=1e-6)
    big = ridge_fit(x, y, alphas=(1e9,))
    assert np.all(np.abs(big.weights) < 1e-6)
    with pytest.raises(ValueError, match="constant"):
        ridge_fit(x, np.ones(40))


def test_logistic_optimality_and_separation():
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0, 1, 0, 1])
    p = logistic_solve(x, y, c=1.0, penalty="l2")
    _, g = logistic_objective(p, x, y, 1.0, "l2")
    assert np.linalg.norm(g) < 1e-6
    xs = np.linspace(-3, 3, 40)[:, None]
    ys = (xs[:, 0] > 0).astype(int)
    m = logistic_fit(xs, ys, cs=(1.0,), penalties=("l2",), max_iters=(200,))
    assert metric_auroc(m.predict_proba(xs), ys) == 1.0
    with pytest.raises(ValueError, match="single-class"):
        logistic_fit(xs, np.zeros(40))


def test_logistic_random_labels_near_half():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4000, 3))
    y = rng.integers(0, 2, 4000)
    m = logistic_fit(x[:2000], y[:2000], cs=(1.0,), penalties=("l2",), max_iters=(100,))
    assert abs(metric_auroc(m.predict_proba(x[2000:]), y[2000:]) - 0.5) < 0.05


def test_l1_shrinks_irrelevant_features():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(300, 5))
    y = (x[:, 0] + 0.3 * rng.normal(size=300) > 0).astype(int)
    m = logistic_fit(x, y, cs=(0.05,), penalties=("l1",), max_iters=(500,))
    assert abs(m.weights[0]) > 0.1 and np.sum(m.weights[1:] == 0) >= 3


def test_multinomial():
    rng = np.random.default_rng(0)
    centers = np.array([[0, 4], [4, 0], [-4, -4]])
    y = np.repeat([0, 1, 2], 30)
    x = centers[y] + rng.normal(size=(90, 2))
    m = multinomial_logistic_fit(x, y.astype(str), cs=(1.0,))
    assert metric_accuracy(m.predict(x), y.astype(str)) > 0.95


def test_run_probe_report():
    rng = np.random.default_rng(0)
    ids = np.repeat([f"s{i}" for i in range(20)], 5)
    y = np.repeat(np.arange(20) % 2, 5)
    x = rng.normal(size=(100, 4)) + y[:, None] * 2.0
    es = EmbeddingSet(x, ids, labels=y)
    r = run_probe(es, "cls", "binary", (0.6, 0.2, 0.2), seed=1, n_boot=100)
    assert r.metric == "auroc" and r.n_test == 20 and r.point > 0.9 and r.lo <= r.hi
    assert r == run_probe(es, "cls", "binary", (0.6, 0.2, 0.2), seed=1, n_boot=100)
    rr = run_probe(EmbeddingSet(x, ids, labels=x[:, 0] * 2 + 1), "reg", "regression", (0.6, 0.2, 0.2), n_boot=50)
    assert rr.metric == "mae" and rr.point < 0.1
    rm = run_probe(EmbeddingSet(x, ids, labels=y.astype(str)), "mc", "multiclass", (0.6, 0.2, 0.2), n_boot=50)
    assert rm.metric == "accuracy" and "multinomial" in rm.note


def test_probe_report_format():
    r = ProbeReport("t", "auroc", 0.8567, 0.8012, 0.9049, 10)
    assert r.formatted() == "0.86 [0.80–0.90]"
    with pytest.raises(ValueError):
        ProbeReport("t", "auroc", 0.5, 0.6, 0.4, 10)
    assert not ProbeReport("t", "mae", 1.0, 1.1, 1.2, 3).contains_point


# --- bootstrap and Wilcoxon ----------------------------------------------------

def test_bootstrap_constant_correct():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    assert bootstrap_ci(t, t, "mae", n=200, seed=0) == (0.0, 0.0)


def test_bootstrap_exhaustive_six_points():
    y = np.array([0, 0, 1, 0, 1, 1])
    s = np.array([0.1, 0.6, 0.35, 0.4, 0.8, 0.7])
    vals = []
    for idx in itertools.product(range(6), repeat=6):
        try:
            vals.append(auroc_pairs(s[list(idx)], y[list(idx)]))
        except ValueError:
            pass
    expected = np.percentile(vals, [2.5, 97.5])
    lo, hi = bootstrap_ci(y, s, "auroc", exhaustive=True)
    assert (lo, hi) == pytest.approx(tuple(expected), abs=1e-12)
    point = metric_auroc(s, y)
    assert lo <= point <= hi
    # random resampling converges to the enumeration
    rlo, rhi = bootstrap_ci(y, s, "auroc", n=4000, seed=0)
    assert abs(rlo - lo) < 0.1 and abs(rhi - hi) < 0.05


def test_bootstrap_point_inside_ci_seeded():
    rng = np.random.default_rng(5)
    for seed in range(10):
        y = rng.integers(0, 2, 30)
        y[:2] = [0, 1]
        s = y + rng.normal(size=30)
        lo, hi = bootstrap_ci(y, s, "auroc", n=300, seed=seed)
        assert lo <= metric_auroc(s, y) <= hi


def test_wilcoxon_matches_enumeration():
    rng = np.random.default_rng(0)
    for n in range(5, 9):
        for _ in range(10):
            a = rng.normal(size=n)
            b = a + rng.normal(0.4, 1, size=n)
            assert wilcoxon_signed_rank(a, b) == pytest.approx(wilcoxon_brute(a, b), abs=1e-12)
    # tied magnitudes
    a, b = np.array([1, 2, 3, 4, 5, 6.0]), np.array([2, 1, 4, 2, 7, 6.5])
    assert wilcoxon_signed_rank(a, b) == pytest.approx(wilcoxon_brute(a, b), abs=1e-12)


def test_wilcoxon_edges():
    with pytest.raises(ValueError, match="all differences zero"):
        wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])
    for n in (5, 6, 8):
        assert wilcoxon_signed_rank(np.arange(n) + 10.0, np.arange(n)) == pytest.approx(2 / 2 ** n)
    support, prob = wilcoxon_exact_distribution([1, 2, 3])
    assert support.tolist() == [0, 1, 2, 3, 4, 5, 6]
    np.testing.assert_allclose(prob * 8, [1, 1, 1, 2, 1, 1, 1])


def test_wilcoxon_normal_branch_close_to_scipy():
    from scipy.stats import wilcoxon
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=30), rng.normal(0.3, 1, size=30)
    ref = wilcoxon(a, b, correction=True, method="approx").pvalue
    assert wilcoxon_signed_rank(a, b) == pytest.approx(ref, rel=1e-9)


# --- distances and subgroups ---------------------------------------------------

def test_pairwise_distances():
    same = pairwise_distances(EmbeddingSet(np.ones((4, 3)), list("abcd")), "euclidean")
    assert np.all(same.values == 0)
    r = pairwise_distances(EmbeddingSet(np.eye(3), list("abc")), "cosine")
    assert len(r.values) == 3 and np.allclose(r.values, 1.0) and r.hist_counts.sum() == 3
    with pytest.raises(ValueError):
        pairwise_distances(EmbeddingSet(np.eye(2), ["a", "a"]))


def test_grouped_metrics():
    t = np.array([1.0, 2, 3, 4, 5, 6])
    p = np.array([1.0, 2, 3, 5, 7, 9])
    rows = grouped_metrics(t, p, ["x"] * 3 + ["y"] * 3, "mae", n_boot=50, seed=0)
    assert [r["point"] for r in rows] == [0.0, 2.0]
    assert sum(r["n"] for r in rows) == 6 and all(r["small"] for r in rows)
    single = grouped_metrics(t, p, ["all"] * 6, "mae", n_boot=20, seed=0)
    assert single[0]["point"] == metric_mae(p, t)
    with pytest.raises(ValueError):
        grouped_metrics([], [], [])
