"""Attack evaluation: classifiers, advantage estimates, analytic bounds.

The measurement protocol is the same everywhere: featurize traces, train
an L2-regularized logistic regression per feature set (and on the union),
and convert held-out test accuracy into a distinguishing advantage.

For a balanced two-class game the baseline is 1/2, so::

    raw advantage        = max(0, accuracy - 1/2)
    normalized advantage = raw / (1/2)        # 1.0 means perfect

Fingerprinting games have prior-dependent baselines; see
:func:`fingerprint_advantage`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse

__all__ = [
    "LogRegModel",
    "train_logreg",
    "stratified_split",
    "SetResult",
    "AdvantageReport",
    "advantage_from_matrices",
    "evaluate_advantage",
    "evaluate_seq_advantage",
    "FingerprintReport",
    "fingerprint_advantage",
    "dp_bound",
    "dp_bound_useful",
    "KsResult",
    "ks_test",
]


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

def _as_matrix(X):
    if scipy.sparse.issparse(X):
        return scipy.sparse.csr_matrix(X, dtype=np.float64)
    return np.asarray(X, dtype=np.float64)


@dataclass
class LogRegModel:
    """A fitted (possibly multinomial) logistic regression.

    ``weights`` is (d,) for two classes and (d, K) otherwise; inputs are
    standardized with the stored ``mean``/``scale`` before scoring.
    """

    classes: np.ndarray
    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    l2_lambda: float
    loss_history: list[float]
    grad_norm: float

    def _scores(self, X):
        X = _as_matrix(X)
        if scipy.sparse.issparse(X):
            Xs = X.multiply(1.0 / self.scale).tocsr()
            shift = (self.mean / self.scale) @ self.weights
            return Xs @ self.weights - shift + self.bias
        Xs = (X - self.mean) / self.scale
        return Xs @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        z = self._scores(X)
        if z.ndim == 1:
            p1 = 1.0 / (1.0 + np.exp(-z))
            return np.column_stack([1.0 - p1, p1])
        z = z - z.max(axis=1, keepdims=True)
        ez = np.exp(z)
        return ez / ez.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]

    def accuracy(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))


def _standardization(X):
    if scipy.sparse.issparse(X):
        # column scaling only: centering would densify the matrix, and
        # hashed-count features are near-centered anyway
        m = np.zeros(X.shape[1])
        sq = np.asarray(X.multiply(X).mean(axis=0)).ravel()
        s = np.sqrt(sq)
    else:
        m = X.mean(axis=0)
        s = X.std(axis=0)
    s = np.where(s > 0, s, 1.0)
    return m, s


def train_logreg(X, y, l2_lambda: float = 1.0, iterations: int = 1000) -> LogRegModel:
    """Fit L2-regularized logistic regression with a quasi-Newton solver.

    The objective is mean cross-entropy plus ``l2_lambda/2 * ||W||^2``
    (bias unpenalized) over standardized features; it is smooth and
    strongly convex, and the fit is deterministic given the inputs.  The
    gradient norm at the returned weights is stored on the model and is
    expected to be at most 1e-4.
    """
    X = _as_matrix(X)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) with one label per row")
    if scipy.sparse.issparse(X):
        if not np.all(np.isfinite(X.data)):
            raise ValueError("features must be finite")
    elif not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    classes = np.unique(y)
    k = len(classes)
    if k < 2:
        raise ValueError("training data must contain at least two classes")
    if l2_lambda < 0:
        raise ValueError("l2_lambda must be non-negative")

    mean, scale = _standardization(X)
    if scipy.sparse.issparse(X):
        Xs = X.multiply(1.0 / scale).tocsr()
        col_shift = mean / scale  # fold centering into the bias column
    else:
        Xs = (X - mean) / scale
        col_shift = None
    n, d = Xs.shape

    def apply_shift(z, w):
        # z currently equals Xs @ w for the uncentered sparse matrix
        if col_shift is None:
            return z
        return z - col_shift @ w

    if k == 2:
        yb = (y == classes[1]).astype(np.float64)

        def objective(theta):
            w, b = theta[:d], theta[d]
            z = apply_shift(Xs @ w, w) + b
            # stable log(1 + e^z) - y z
            loss = float(np.mean(np.logaddexp(0.0, z) - yb * z))
            loss += 0.5 * l2_lambda * float(w @ w)
            r = 1.0 / (1.0 + np.exp(-z)) - yb
            gw = (Xs.T @ r) / n
            gw = np.asarray(gw).ravel()
            if col_shift is not None:
                gw -= col_shift * r.mean()
            gw += l2_lambda * w
            return loss, np.concatenate([gw, [r.mean()]])

        theta0 = np.zeros(d + 1)
    else:
        yi = np.searchsorted(classes, y)
        onehot = np.zeros((n, k))
        onehot[np.arange(n), yi] = 1.0

        def objective(theta):
            w = theta[: d * k].reshape(d, k)
            b = theta[d * k:]
            z = apply_shift(Xs @ w, w) + b
            zmax = z.max(axis=1, keepdims=True)
            lse = zmax.ravel() + np.log(np.exp(z - zmax).sum(axis=1))
            loss = float(np.mean(lse - z[np.arange(n), yi]))
            loss += 0.5 * l2_lambda * float((w * w).sum())
            p = np.exp(z - lse[:, None])
            r = (p - onehot) / n
            gw = Xs.T @ r
            gw = np.asarray(gw)
            if col_shift is not None:
                gw -= np.outer(col_shift, r.sum(axis=0))
            gw += l2_lambda * w
            return loss, np.concatenate([gw.ravel(), r.sum(axis=0)])

        theta0 = np.zeros(d * k + k)

    history: list[float] = []

    def record(theta):
        history.append(objective(theta)[0])

    res = scipy.optimize.minimize(
        objective, theta0, jac=True, method="L-BFGS-B", callback=record,
        options={"maxiter": iterations, "maxfun": 20 * iterations,
                 "ftol": 1e-14, "gtol": 1e-9},
    )
    theta = res.x
    grad_norm = float(np.linalg.norm(objective(theta)[1]))

    if k == 2:
        weights, bias = theta[:d], np.float64(theta[d])
    else:
        weights, bias = theta[: d * k].reshape(d, k), theta[d * k:]
    return LogRegModel(
        classes=classes, weights=weights, bias=bias, mean=mean, scale=scale,
        l2_lambda=l2_lambda, loss_history=history, grad_norm=grad_norm,
    )


def stratified_split(y, test_frac: float, rng: np.random.Generator):
    """Per-class shuffled train/test split preserving class ratios.

    Classes with a single example go entirely to the training side; for
    all others both sides get at least one example.  Returns
    ``(train_idx, test_idx)`` as sorted integer arrays.
    """
    y = np.asarray(y)
    if not 0.0 < test_frac < 1.0:
        raise ValueError("test_frac must be in (0, 1)")
    train, test = [], []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = rng.permutation(idx)
        n = len(idx)
        if n == 1:
            train.extend(idx)
            continue
        n_test = min(n - 1, max(1, int(round(test_frac * n))))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


# ---------------------------------------------------------------------------
# advantage protocol
# ---------------------------------------------------------------------------

@dataclass
class SetResult:
    """Accuracy and advantage of one feature set over the trial splits."""

    accuracies: list[float]
    baseline: float = 0.5

    @property
    def accuracy_mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def normalized(self) -> list[float]:
        top = 1.0 - self.baseline
        return [max(0.0, a - self.baseline) / top for a in self.accuracies]

    @property
    def normalized_mean(self) -> float:
        return float(np.mean(self.normalized))

    @property
    def normalized_std(self) -> float:
        return float(np.std(self.normalized))

    @property
    def normalized_stderr(self) -> float:
        return self.normalized_std / math.sqrt(len(self.accuracies))

    def to_json(self) -> dict:
        return {
            "accuracies": [float(a) for a in self.accuracies],
            "accuracy_mean": self.accuracy_mean,
            "baseline": self.baseline,
            "raw_advantage_mean": max(0.0, self.accuracy_mean - self.baseline),
            "normalized_mean": self.normalized_mean,
            "normalized_std": self.normalized_std,
            "normalized_stderr": self.normalized_stderr,
        }


@dataclass
class AdvantageReport:
    sets: dict[str, SetResult]
    trials: int
    n_traces: int

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "n_traces": self.n_traces,
            "sets": {name: r.to_json() for name, r in sorted(self.sets.items())},
        }


def advantage_from_matrices(X_by_set: dict, y, *, trials: int = 5,
                            test_frac: float = 0.2, l2_lambda: float = 1.0,
                            iterations: int = 1000, split_seed: int = 0,
                            include_union: bool = True) -> AdvantageReport:
    """Core advantage measurement over precomputed feature matrices.

    One stratified split per trial (seeded, so reports are reproducible),
    one classifier per feature set per trial, plus a classifier on the
    column-wise union of all sets.
    """
    y = np.asarray(y)
    mats = {name: _as_matrix(X) for name, X in X_by_set.items()}
    if include_union and len(mats) > 1:
        parts = [mats[name] for name in X_by_set]
        if any(scipy.sparse.issparse(m) for m in parts):
            mats["union"] = scipy.sparse.hstack(parts, format="csr")
        else:
            mats["union"] = np.hstack(parts)
    accs: dict[str, list[float]] = {name: [] for name in mats}
    for trial in range(trials):
        rng = np.random.default_rng([split_seed, trial])
        tr, te = stratified_split(y, test_frac, rng)
        for name, X in mats.items():
            model = train_logreg(X[tr], y[tr], l2_lambda=l2_lambda,
                                 iterations=iterations)
            accs[name].append(model.accuracy(X[te], y[te]))
    n = len(y)
    return AdvantageReport(
        sets={name: SetResult(a) for name, a in accs.items()},
        trials=trials, n_traces=n,
    )


def evaluate_advantage(dataset, feature_sets, *, params=None, trials: int = 5,
                       test_frac: float = 0.2, l2_lambda: float = 1.0,
                       iterations: int = 1000) -> AdvantageReport:
    """Measure distinguishing advantage of each feature set on a dataset.

    ``dataset`` is any object yielding ``(trace, label)`` pairs from
    ``iter_labeled()`` and exposing ``base_seed``; labels must form a
    two-class problem.
    """
    from .features import FeatureParams, extract_features

    params = params or FeatureParams()
    rows: dict[str, list[np.ndarray]] = {name: [] for name in feature_sets}
    labels = []
    for trace, label in dataset.iter_labeled():
        labels.append(label)
        for name in feature_sets:
            fv = extract_features(trace, [name], params)
            rows[name].append(fv.values)
    X_by_set = {name: np.vstack(vals) for name, vals in rows.items()}
    return advantage_from_matrices(
        X_by_set, labels, trials=trials, test_frac=test_frac,
        l2_lambda=l2_lambda, iterations=iterations,
        split_seed=getattr(dataset, "base_seed", 0),
    )


def evaluate_seq_advantage(dataset, *, trials: int = 5, test_frac: float = 0.2,
                           l2_lambda: float = 1.0, iterations: int = 1000,
                           max_ngram: int = 3, hash_dim: int = 2 ** 15) -> AdvantageReport:
    """Sequence-model advantage: hashed n-gram features over token streams.

    Stands in for a recurrent sequence classifier: the trace is tokenized,
    n-grams (n <= ``max_ngram``) are hash-bucketed into ``hash_dim``
    counts, and a logistic regression is trained on those counts.  Captures
    local ordering that the handcrafted count features discard.
    """
    from .features import ngram_hash_matrix, tokenize

    seqs, labels = [], []
    for trace, label in dataset.iter_labeled():
        seqs.append(tokenize(trace).tokens)
        labels.append(label)
    X = ngram_hash_matrix(seqs, max_ngram=max_ngram, dim=hash_dim)
    report = advantage_from_matrices(
        {"seq": X}, labels, trials=trials, test_frac=test_frac,
        l2_lambda=l2_lambda, iterations=iterations,
        split_seed=getattr(dataset, "base_seed", 0),
    )
    return report


# ---------------------------------------------------------------------------
# fingerprinting protocol
# ---------------------------------------------------------------------------

@dataclass
class FingerprintReport:
    membership: SetResult
    fingerprint: SetResult
    s_c: float
    s_f: float

    def to_json(self) -> dict:
        return {
            "s_c": self.s_c,
            "s_f": self.s_f,
            "membership": self.membership.to_json(),
            "fingerprint": self.fingerprint.to_json(),
        }


def fingerprint_advantage(dataset, *, params=None, trials: int = 5,
                          test_frac: float = 0.2, l2_lambda: float = 1.0,
                          iterations: int = 1000) -> FingerprintReport:
    """Membership and identity advantage for a fingerprinting dataset.

    Baselines come from the sampling prior: ``s_c`` is the best blind
    interest/no-interest guess, ``s_f`` the best blind identity guess
    among interesting elements.  The membership classifier trains on all
    traces; the identity classifier only on traces whose element is in
    the interest set.
    """
    from .features import FEATURE_SET_NAMES, FeatureParams, extract_features

    params = params or FeatureParams()
    rows, members, identities = [], [], []
    for trace, label in dataset.iter_labeled():
        member, ident = label
        fv = extract_features(trace, FEATURE_SET_NAMES, params)
        rows.append(fv.values)
        members.append(int(member))
        identities.append(int(ident))
    X = np.vstack(rows)
    members = np.array(members)
    identities = np.array(identities)
    s_c = dataset.s_c
    s_f = dataset.s_f
    split_seed = getattr(dataset, "base_seed", 0)

    mem_accs, fp_accs = [], []
    member_idx = np.flatnonzero(members == 1)
    for trial in range(trials):
        rng = np.random.default_rng([split_seed, 101, trial])
        tr, te = stratified_split(members, test_frac, rng)
        model = train_logreg(X[tr], members[tr], l2_lambda=l2_lambda,
                             iterations=iterations)
        mem_accs.append(model.accuracy(X[te], members[te]))

        rng2 = np.random.default_rng([split_seed, 202, trial])
        ym = identities[member_idx]
        trm, tem = stratified_split(ym, test_frac, rng2)
        model2 = train_logreg(X[member_idx][trm], ym[trm],
                              l2_lambda=l2_lambda, iterations=iterations)
        fp_accs.append(model2.accuracy(X[member_idx][tem], ym[tem]))

    return FingerprintReport(
        membership=SetResult(mem_accs, baseline=s_c),
        fingerprint=SetResult(fp_accs, baseline=s_f),
        s_c=s_c, s_f=s_f,
    )


# ---------------------------------------------------------------------------
# analytic bound and distribution distance
# ---------------------------------------------------------------------------

def dp_bound(eps: float, delta: float) -> float:
    """Raw advantage cap implied by an (eps, delta)-DP observable:
    ``(e^eps - 1)/4 + delta/2``.

    Multiply by 2 to compare against normalized advantages.  The cap is
    informative only below the trivial advantage of 1/2; see
    :func:`dp_bound_useful`.
    """
    if eps < 0 or delta < 0:
        raise ValueError("eps and delta must be non-negative")
    return (math.exp(eps) - 1.0) / 4.0 + delta / 2.0


def dp_bound_useful(eps: float, delta: float) -> bool:
    """True when the bound is below the trivial cap, i.e. eps < ln(3 - 2 delta)."""
    return eps < math.log(3.0 - 2.0 * delta)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    pvalue: float


def ks_test(a, b) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    The statistic is the sup-distance between the two empirical CDFs; the
    p-value is the classical limit ``2 * sum_k (-1)^(k-1) exp(-2 k^2 x^2)``
    evaluated at ``x = D * sqrt(n1 n2 / (n1 + n2))``.
    """
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / n1
    cdf_b = np.searchsorted(b, grid, side="right") / n2
    d = float(np.max(np.abs(cdf_a - cdf_b)))

    lam = d * math.sqrt(n1 * n2 / (n1 + n2))
    if lam < 10 * np.finfo(float).tiny or lam < 0.3:
        # the alternating series is numerically useless this low; the
        # distribution function is effectively 0 there, so p ~ 1
        p = 1.0
    else:
        terms = [2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
                 for k in range(1, 101)]
        p = min(1.0, max(0.0, math.fsum(terms)))
    return KsResult(statistic=d, pvalue=p)
