"""Linear probing of frozen embeddings, metrics, bootstrap CIs and tests.

Protocol: split subjects (never segments) into train/val/test, fit a
regularised linear probe on the training subjects with the penalty chosen by
5-fold cross-validation, and report the test metric with a 500-resample
percentile bootstrap interval.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, log_softmax as _log_softmax, logsumexp

# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingSet:
    matrix: np.ndarray
    subject_ids: np.ndarray
    labels: np.ndarray | None = None
    segment_index: np.ndarray | None = None

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        self.subject_ids = np.asarray(self.subject_ids).astype(str)
        n = self.matrix.shape[0]
        if self.subject_ids.shape != (n,):
            raise ValueError(f"{self.subject_ids.size} subject ids for {n} rows")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != n:
                raise ValueError(f"{len(self.labels)} labels for {n} rows")
        if self.segment_index is not None:
            self.segment_index = np.asarray(self.segment_index)
            if len(self.segment_index) != n:
                raise ValueError(f"{len(self.segment_index)} segment indices for {n} rows")

    def __len__(self):
        return self.matrix.shape[0]

    def subset(self, rows) -> "EmbeddingSet":
        rows = np.asarray(rows)
        return EmbeddingSet(self.matrix[rows], self.subject_ids[rows],
                            None if self.labels is None else self.labels[rows],
                            None if self.segment_index is None else self.segment_index[rows])


@dataclass
class ProbeReport:
    task: str
    metric: str
    point: float
    lo: float
    hi: float
    n_test: int
    params: dict = field(default_factory=dict)
    seed: int | None = None
    note: str = ""

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"inverted confidence interval ({self.lo}, {self.hi})")

    @property
    def contains_point(self) -> bool:
        return self.lo <= self.point <= self.hi

    def formatted(self, digits: int = 2) -> str:
        """``x.xx [lo–hi]``."""
        return f"{self.point:.{digits}f} [{self.lo:.{digits}f}–{self.hi:.{digits}f}]"


# ---------------------------------------------------------------------------
# embeddings and splits
# ---------------------------------------------------------------------------

def extract_embeddings(checkpoint, store, batch_size: int = 64) -> EmbeddingSet:
    """Projected embeddings Z of every segment in a store, eval mode."""
    from .model import ModelConfigError, embed_numpy, load_model
    from .waveform_io import read_store

    model, _, _ = load_model(checkpoint)
    segments, meta, _ = read_store(store)
    if segments.shape[1] != model.config.input_len:
        raise ModelConfigError(
            f"store segments have length {segments.shape[1]}, model expects {model.config.input_len}")
    z = embed_numpy(model, segments, batch_size)
    return EmbeddingSet(z, [m["subject_id"] for m in meta], segment_index=np.arange(len(meta)))


def pool_by_subject(es: EmbeddingSet) -> EmbeddingSet:
    """Mean row per subject (first-seen order); labels must agree within a subject."""
    subjects, first, inverse = np.unique(es.subject_ids, return_index=True, return_inverse=True)
    order = np.argsort(first)
    pooled = np.zeros((subjects.size, es.matrix.shape[1]))
    np.add.at(pooled, inverse, es.matrix)
    pooled /= np.bincount(inverse, minlength=subjects.size)[:, None]
    labels = None
    if es.labels is not None:
        labels = []
        for k in range(subjects.size):
            vals = es.labels[inverse == k]
            if np.any(vals != vals[0]):
                raise ValueError(f"conflicting labels within subject {subjects[k]}")
            labels.append(vals[0])
        labels = np.asarray(labels)[order]
    return EmbeddingSet(pooled[order], subjects[order], labels)


def split_subjects(subject_ids, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Row indices of (train, val, test) with disjoint subject sets."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1) > 1e-9:
        raise ValueError("ratios must be three nonnegative numbers summing to 1")
    ids = np.asarray(subject_ids).astype(str)
    subjects = np.unique(ids)
    n = subjects.size
    needed = int(np.count_nonzero(ratios))
    if n < needed:
        raise ValueError(f"{n} subjects cannot fill {needed} partitions")
    counts = np.floor(ratios * n + 0.5).astype(int)
    counts[ratios > 0] = np.maximum(counts[ratios > 0], 1)
    # hand any rounding surplus/deficit to the largest partition
    counts[np.argmax(ratios)] += n - counts.sum()
    if np.any(counts[ratios > 0] < 1):
        raise ValueError(f"{n} subjects cannot fill {needed} partitions")
    perm = np.random.default_rng(seed).permutation(subjects)
    parts = np.split(perm, np.cumsum(counts)[:2])
    out = tuple(np.flatnonzero(np.isin(ids, p)) for p in parts)
    assert_disjoint(ids, *out)
    return out


def assert_disjoint(subject_ids, *row_sets):
    ids = np.asarray(subject_ids).astype(str)
    seen: set = set()
    for rows in row_sets:
        s = set(ids[rows])
        if seen & s:
            raise AssertionError(f"subject leakage across splits: {sorted(seen & s)[:5]}")
        seen |= s


def subject_split(es: EmbeddingSet, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    return tuple(es.subset(r) for r in split_subjects(es.subject_ids, ratios, seed))


# ---------------------------------------------------------------------------
# statistical-feature baseline
# ---------------------------------------------------------------------------

STAT_FEATURES = ("mean", "median", "max", "min", "p25", "p50", "p75")


def stat_features(segment) -> np.ndarray:
    x = np.asarray(segment, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty segment")
    p25, p50, p75 = np.percentile(x, [25, 50, 75], method="linear")
    return np.array([x.mean(), np.median(x), x.max(), x.min(), p25, p50, p75])


def stat_feature_matrix(segments) -> np.ndarray:
    x = np.asarray(segments, dtype=np.float64)
    p25, p50, p75 = np.percentile(x, [25, 50, 75], axis=1, method="linear")
    return np.stack([x.mean(1), np.median(x, 1), x.max(1), x.min(1), p25, p50, p75], axis=1)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _pair(pred, target):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("empty input")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch {p.size} vs {t.size}")
    return p, t


def metric_auroc(scores, labels) -> float:
    """P(score of a positive > score of a negative), ties counted as 1/2."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(int)
    if s.size != y.size or s.size == 0:
        raise ValueError("scores and labels must be nonempty and aligned")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != y.size:
        raise ValueError("AUROC needs both classes (labels 0/1)")
    ranks = stats.rankdata(s)  # average ranks implement the 1/2 tie rule
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def metric_mae(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t)))


def metric_smape(pred, target) -> float:
    """100/n * sum |p - t| / ((|p| + |t|) / 2); pairs with |p| + |t| = 0 are skipped."""
    p, t = _pair(pred, target)
    den = (np.abs(p) + np.abs(t)) / 2
    keep = den > 0
    if not keep.any():
        return 0.0
    return float(100.0 * np.sum(np.abs(p - t)[keep] / den[keep]) / p.size)


def metric_r2(pred, target) -> float:
    p, t = _pair(pred, target)
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 undefined for constant targets")
    return float(1 - np.sum((t - p) ** 2) / ss_tot)


def metric_accuracy(pred, target) -> float:
    p = np.asarray(pred).ravel()
    t = np.asarray(target).ravel()
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("predictions and targets must be nonempty and aligned")
    return float(np.mean(p == t))


def metric_f1(pred, target, positive=1) -> float:
    """Binary F1 of hard predictions; 0 when there are no true positives."""
    p = np.asarray(pred).ravel() == positive
    t = np.asarray(target).ravel() == positive
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("predictions and targets must be nonempty and aligned")
    tp = np.sum(p & t)
    if tp == 0:
        return 0.0
    return float(2 * tp / (np.sum(p) + np.sum(t)))


METRICS = {
    "auroc": metric_auroc, "mae": metric_mae, "smape": metric_smape,
    "r2": metric_r2, "accuracy": metric_accuracy, "f1": metric_f1,
}


def _metric_fn(metric):
    return METRICS[metric] if isinstance(metric, str) else metric


# ---------------------------------------------------------------------------
# bootstrap and tests
# ---------------------------------------------------------------------------

def bootstrap_ci(y_true, y_pred, metric="auroc", n: int = 500, seed=None, level: float = 0.95,
                 exhaustive: bool = False):
    """Percentile CI from resampling (truth, prediction) pairs with replacement.

    Resamples on which the metric is undefined (e.g. a single class for
    AUROC) are redrawn.  ``exhaustive=True`` replaces the random draws by all
    ``m**m`` index tuples (tiny ``m`` only).  Note metric argument order:
    ``metric(y_pred, y_true)``.
    """
    fn = _metric_fn(metric)
    yt = np.asarray(y_true)
    yp = np.asarray(y_pred)
    m = len(yt)
    if m < 2 or len(yp) != m:
        raise ValueError("need at least two aligned test points")
    q = 100 * np.array([(1 - level) / 2, (1 + level) / 2])
    values = []
    if exhaustive:
        if m > 8:
            raise ValueError("exhaustive bootstrap is limited to 8 points")
        for idx in itertools.product(range(m), repeat=m):
            idx = np.asarray(idx)
            try:
                values.append(fn(yp[idx], yt[idx]))
            except ValueError:
                continue
    else:
        rng = np.random.default_rng(seed)
        attempts = 0
        while len(values) < n:
            attempts += 1
            if attempts > 50 * n:
                break
            idx = rng.integers(0, m, m)
            try:
                values.append(fn(yp[idx], yt[idx]))
            except ValueError:
                continue
    if not values:
        raise ValueError("metric undefined on all resamples")
    lo, hi = np.percentile(np.asarray(values), q)
    return float(lo), float(hi)


def _wilcoxon_ranks(a, b):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError("paired samples must be 1-D and aligned")
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("all differences zero")
    ranks = stats.rankdata(np.abs(d))
    return d, ranks


def wilcoxon_exact_distribution(ranks) -> tuple[np.ndarray, np.ndarray]:
    """Support and probabilities of T+ under the sign-flip null (2^n assignments)."""
    ranks = np.asarray(ranks, dtype=np.float64)
    n = ranks.size
    # ranks are multiples of 1/2; work in half-units to keep exact integers
    r2 = np.round(ranks * 2).astype(int)
    counts = np.zeros(int(r2.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    support = np.nonzero(counts)[0]
    return support / 2.0, counts[support] / 2.0 ** n


def wilcoxon_signed_rank(a, b, min_nonzero: int = 5, exact_max: int = 12) -> float:
    """Two-sided Wilcoxon signed-rank p-value; zero differences are dropped.

    Exact sign-flip distribution for n <= ``exact_max`` nonzero differences,
    otherwise a normal approximation with tie and continuity corrections.
    """
    d, ranks = _wilcoxon_ranks(a, b)
    n = d.size
    if n < min_nonzero:
        raise ValueError(f"need at least {min_nonzero} nonzero differences, got {n}")
    t_plus = float(ranks[d > 0].sum())
    if n <= exact_max:
        support, prob = wilcoxon_exact_distribution(ranks)
        tol = 1e-9
        lower = prob[support <= t_plus + tol].sum()
        upper = prob[support >= t_plus - tol].sum()
        return float(min(1.0, 2 * min(lower, upper)))
    mu = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_counts ** 3 - tie_counts) / 48
    z = max(abs(t_plus - mu) - 0.5, 0.0) / np.sqrt(var)
    return float(min(1.0, 2 * stats.norm.sf(z)))


# ---------------------------------------------------------------------------
# linear probes
# ---------------------------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=np.float64)
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


def kfold_indices(n: int, k: int = 5, seed: int = 0, groups=None):
    """Yield (train_rows, val_rows); whole groups stay on one side when given."""
    rng = np.random.default_rng(seed)
    if groups is None:
        units = rng.permutation(n)
        folds = np.array_split(units, min(k, n))
        for f in folds:
            yield np.setdiff1d(np.arange(n), f), np.sort(f)
        return
    groups = np.asarray(groups).astype(str)
    uniq = rng.permutation(np.unique(groups))
    for f in np.array_split(uniq, min(k, uniq.size)):
        val = np.isin(groups, f)
        yield np.flatnonzero(~val), np.flatnonzero(val)


@dataclass
class RidgeModel:
    weights: np.ndarray
    intercept: float
    alpha: float
    scaler: Standardizer

    def predict(self, x):
        return self.scaler.transform(x) @ self.weights + self.intercept


def ridge_solve(x, y, alpha: float):
    """Closed-form ridge on already-standardized ``x`` with unpenalized intercept."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x.mean(axis=0), y.mean()
    xc = x - xm
    w = np.linalg.solve(xc.T @ xc + alpha * np.eye(x.shape[1]), xc.T @ (y - ym))
    return w, float(ym - xm @ w)


def ridge_fit(x, y, alphas=(0.1, 1.0, 10.0, 100.0), folds: int = 5, seed: int = 0, groups=None) -> RidgeModel:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("ridge needs at least two samples")
    if np.all(y == y[0]):
        raise ValueError("degenerate all-constant target")
    scaler = Standardizer.fit(x)
    xs = scaler.transform(x)
    alphas = list(alphas)
    if len(alphas) > 1 and x.shape[0] >= folds:
        scores = []
        for a in alphas:
            err = []
            for tr, va in kfold_indices(len(y), folds, seed, groups):
                w, b = ridge_solve(xs[tr], y[tr], a)
                err.append(np.mean(np.abs(xs[va] @ w + b - y[va])))
            scores.append(np.mean(err))
        best = alphas[int(np.argmin(scores))]
    else:
        best = alphas[0]
    w, b = ridge_solve(xs, y, best)
    return RidgeModel(w, b, best, scaler)


def logistic_objective(params, x, y, c: float, penalty: str = "l2"):
    """C * sum(log-loss) + penalty(w); intercept (last entry) unpenalized.

    Returns (value, gradient).  For ``l1`` the gradient is of the smooth
    part only.
    """
    w, b = params[:-1], params[-1]
    z = x @ w + b
    # log(1 + e^z) - y z, stable
    loss = c * np.sum(np.logaddexp(0.0, z) - y * z)
    r = c * (expit(z) - y)
    grad = np.concatenate([x.T @ r, [r.sum()]])
    if penalty == "l2":
        loss += 0.5 * w @ w
        grad[:-1] += w
    return float(loss), grad


def _fit_l2(x, y, c, max_iter):
    p0 = np.zeros(x.shape[1] + 1)
    res = optimize.minimize(logistic_objective, p0, args=(x, y, c, "l2"), jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-15})
    return res.x


def _fit_l1(x, y, c, max_iter):
    """FISTA on C*logloss + ||w||_1 with a fixed Lipschitz step."""
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    lip = c * 0.25 * np.linalg.norm(xa, 2) ** 2
    step = 1.0 / max(lip, 1e-12)
    p = np.zeros(d + 1)
    v = p.copy()
    t = 1.0
    for _ in range(max_iter):
        _, g = logistic_objective(v, x, y, c, "l1")
        q = v - step * g
        q[:-1] = np.sign(q[:-1]) * np.maximum(np.abs(q[:-1]) - step, 0.0)
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        v = q + (t - 1) / t_next * (q - p)
        p, t = q, t_next
    return p


@dataclass
class LogisticModel:
    weights: np.ndarray
    intercept: float
    c: float
    penalty: str
    max_iter: int
    scaler: Standardizer

    def decision(self, x):
        return self.scaler.transform(x) @ self.weights + self.intercept

    def predict_proba(self, x):
        return expit(self.decision(x))

    def predict(self, x):
        return (self.decision(x) > 0).astype(int)


def logistic_solve(x, y, c: float, penalty: str = "l2", max_iter: int = 200):
    """Fit on already-standardized ``x``; returns the parameter vector [w..., b]."""
    if penalty == "l2":
        return _fit_l2(x, y, c, max_iter)
    if penalty == "l1":
        return _fit_l1(x, y, c, max_iter)
    raise ValueError(f"unknown penalty {penalty!r}")


def logistic_fit(x, y, cs=(0.01, 0.1, 1, 10, 100), penalties=("l2", "l1"), max_iters=(100, 200),
                 folds: int = 5, seed: int = 0, groups=None) -> LogisticModel:
    """Binary logistic probe with (C, penalty, max_iter) chosen by CV AUROC."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(int)
    if np.unique(y).size < 2:
        raise ValueError("single-class training data")
    scaler = Standardizer.fit(x)
    xs = scaler.transform(x)
    grid = list(itertools.product(cs, penalties, max_iters))
    best = grid[0]
    if len(grid) > 1:
        splits = list(kfold_indices(len(y), folds, seed, groups))
        best_score = -np.inf
        for c, pen, it in grid:
            scores = []
            for tr, va in splits:
                if np.unique(y[tr]).size < 2 or np.unique(y[va]).size < 2:
                    continue
                p = logistic_solve(xs[tr], y[tr], c, pen, it)
                scores.append(metric_auroc(xs[va] @ p[:-1] + p[-1], y[va]))
            score = np.mean(scores) if scores else -np.inf
            if score > best_score + 1e-12:
                best, best_score = (c, pen, it), score
    c, pen, it = best
    p = logistic_solve(xs, y, c, pen, it)
    return LogisticModel(p[:-1], float(p[-1]), c, pen, it, scaler)


@dataclass
class MultinomialModel:
    weights: np.ndarray  # [d, k]
    intercepts: np.ndarray
    classes: np.ndarray
    c: float
    scaler: Standardizer

    def predict_proba(self, x):
        z = self.scaler.transform(x) @ self.weights + self.intercepts
        return np.exp(_log_softmax(z, axis=1))

    def predict(self, x):
        return self.classes[np.argmax(self.predict_proba(x), axis=1)]


def _multinomial_objective(params, x, onehot, c):
    d, k = x.shape[1], onehot.shape[1]
    w = params[:d * k].reshape(d, k)
    b = params[d * k:]
    z = x @ w + b
    lse = logsumexp(z, axis=1, keepdims=True)
    loss = c * np.sum(lse[:, 0] - np.sum(onehot * z, axis=1)) + 0.5 * np.sum(w * w)
    r = c * (np.exp(z - lse) - onehot)
    gw = x.T @ r + w
    return float(loss), np.concatenate([gw.ravel(), r.sum(axis=0)])


def _multinomial_solve(x, onehot, c, max_iter):
    d, k = x.shape[1], onehot.shape[1]
    res = optimize.minimize(_multinomial_objective, np.zeros(d * k + k), args=(x, onehot, c), jac=True,
                            method="L-BFGS-B", options={"maxiter": max_iter, "gtol": 1e-8})
    return res.x[:d * k].reshape(d, k), res.x[d * k:]


def multinomial_logistic_fit(x, y, cs=(0.01, 0.1, 1, 10, 100), max_iter: int = 200, folds: int = 5,
                             seed: int = 0, groups=None) -> MultinomialModel:
    """Softmax regression (l2) with C chosen by CV accuracy."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    classes, yi = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ValueError("single-class training data")
    onehot = np.eye(classes.size)[yi]
    scaler = Standardizer.fit(x)
    xs = scaler.transform(x)
    cs = list(cs)
    best = cs[0]
    if len(cs) > 1:
        scores = []
        splits = list(kfold_indices(len(y), folds, seed, groups))
        for c in cs:
            acc = []
            for tr, va in splits:
                w, b = _multinomial_solve(xs[tr], onehot[tr], c, max_iter)
                acc.append(np.mean(np.argmax(xs[va] @ w + b, axis=1) == yi[va]))
            scores.append(np.mean(acc))
        best = cs[int(np.argmax(scores))]
    w, b = _multinomial_solve(xs, onehot, best, max_iter)
    return MultinomialModel(w, b, classes, best, scaler)


# ---------------------------------------------------------------------------
# full probe run
# ---------------------------------------------------------------------------

TASK_METRIC = {"binary": "auroc", "regression": "mae", "multiclass": "accuracy"}
MULTICLASS_NOTE = "multiclass probe: multinomial logistic regression (not a random forest)"


def run_probe(es: EmbeddingSet, task: str, kind: str = "binary", ratios=(0.8, 0.1, 0.1), seed: int = 0,
              n_boot: int = 500, pool: bool = False) -> ProbeReport:
    """Subject-split, fit the probe on train, score on test with a bootstrap CI."""
    if es.labels is None:
        raise ValueError("embedding set has no labels")
    if kind not in TASK_METRIC:
        raise ValueError(f"unknown task kind {kind!r}")
    if pool:
        es = pool_by_subject(es)
    tr, va, te = split_subjects(es.subject_ids, ratios, seed)
    assert_disjoint(es.subject_ids, tr, te)
    x_tr, x_te = es.matrix[tr], es.matrix[te]
    groups = es.subject_ids[tr]
    metric = TASK_METRIC[kind]
    note = ""
    if kind == "binary":
        y = es.labels.astype(int)
        model = logistic_fit(x_tr, y[tr], seed=seed, groups=groups)
        pred, truth = model.predict_proba(x_te), y[te]
        params = {"C": model.c, "penalty": model.penalty, "max_iter": model.max_iter}
    elif kind == "regression":
        y = es.labels.astype(np.float64)
        model = ridge_fit(x_tr, y[tr], seed=seed, groups=groups)
        pred, truth = model.predict(x_te), y[te]
        params = {"alpha": model.alpha}
    else:
        model = multinomial_logistic_fit(x_tr, es.labels[tr], seed=seed, groups=groups)
        pred, truth = model.predict(x_te), es.labels[te]
        params = {"C": model.c}
        note = MULTICLASS_NOTE
    point = _metric_fn(metric)(pred, truth)
    lo, hi = bootstrap_ci(truth, pred, metric, n_boot, seed)
    params.update({"n_train": int(len(tr)), "n_val": int(len(va))})
    return ProbeReport(task, metric, point, lo, hi, int(len(te)), params, seed, note)


# ---------------------------------------------------------------------------
# embedding-space and subgroup analyses
# ---------------------------------------------------------------------------

@dataclass
class DistanceResult:
    values: np.ndarray
    pairs: list
    hist_counts: np.ndarray
    hist_edges: np.ndarray


def pairwise_distances(es: EmbeddingSet, metric: str = "cosine", bins: int = 20) -> DistanceResult:
    """Distances between all unordered pairs of subject-pooled embeddings."""
    pooled = pool_by_subject(EmbeddingSet(es.matrix, es.subject_ids))
    m = pooled.matrix
    if len(pooled) < 2:
        raise ValueError("need at least two subjects")
    i, j = np.triu_indices(len(pooled), k=1)
    if metric == "euclidean":
        d = np.linalg.norm(m[i] - m[j], axis=1)
    elif metric == "cosine":
        norms = np.linalg.norm(m, axis=1)
        if np.any(norms == 0):
            raise ZeroDivisionError("zero-norm embedding row")
        d = 1.0 - np.sum(m[i] * m[j], axis=1) / (norms[i] * norms[j])
        d = np.maximum(d, 0.0)
    else:
        raise ValueError(f"unknown distance metric {metric!r}")
    counts, edges = np.histogram(d, bins=bins)
    ids = pooled.subject_ids
    return DistanceResult(d, [(ids[a], ids[b]) for a, b in zip(i, j)], counts, edges)


def grouped_metrics(y_true, y_pred, groups, metric="mae", n_boot: int = 500, seed=None, min_size: int = 10):
    """Per-group metric with bootstrap CI; rows for groups below ``min_size`` are flagged."""
    groups = np.asarray(groups).astype(str)
    yt, yp = np.asarray(y_true), np.asarray(y_pred)
    if groups.size == 0:
        raise ValueError("empty group set")
    fn = _metric_fn(metric)
    rows = []
    for g in np.unique(groups):
        sel = groups == g
        point = fn(yp[sel], yt[sel])
        try:
            lo, hi = bootstrap_ci(yt[sel], yp[sel], metric, n_boot, seed)
        except ValueError:
            lo = hi = float("nan")
        rows.append({"group": g, "n": int(sel.sum()), "point": point, "lo": lo, "hi": hi,
                     "small": bool(sel.sum() < min_size)})
    return rows
