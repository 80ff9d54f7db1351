"""Nuisance regression machinery.

Every learner spec is a small frozen dataclass with a ``fit`` method, so the
ensemble can hold any mix of them.  Targets are either ``"mean"``
(unbounded regression) or ``"probability"`` (values in [0, 1]; predictions
are clipped to ``[PROB_EPS, 1 - PROB_EPS]``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls
from scipy.special import expit

from . import trees
from .errors import LearnerError, SingularDesignError

PROB_EPS = 1e-6
MEAN = "mean"
PROBABILITY = "probability"


@dataclass(frozen=True)
class FittedModel:
    predictor: Callable[[np.ndarray], np.ndarray]
    target_kind: str = MEAN
    stack_weights: tuple[float, ...] | None = None
    cv_risks: tuple[float, ...] | None = None

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.asarray(self.predictor(X), dtype=float)
        if self.target_kind == PROBABILITY:
            out = np.clip(out, PROB_EPS, 1.0 - PROB_EPS)
        return out


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _prepare(X, y, weights):
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise LearnerError("cannot fit on empty data")
    if len(X) != len(y):
        raise LearnerError(f"features have {len(X)} rows but targets have {len(y)}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise LearnerError("features and targets must be finite")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float).ravel()
    if len(w) != len(y) or np.any(w < 0) or not np.isfinite(w).all():
        raise LearnerError("weights must be finite, nonnegative and conformable")
    if w.sum() <= 0:
        raise LearnerError("weights sum to zero")
    return X, y, w


def _standardize(X, w):
    sw = w.sum()
    mu = (w @ X) / sw
    Xc = X - mu
    sd = np.sqrt((w @ Xc**2) / sw)
    keep = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    scale = np.where(keep, sd, 1.0)
    return mu, scale, keep


@dataclass(frozen=True)
class RidgeLinear:
    """Least squares with an L2 penalty on standardized slopes; intercept unpenalized."""

    penalty: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.penalty >= 0:
            raise LearnerError("ridge penalty must be >= 0")

    def fit(self, X, y, weights=None, kind: str = MEAN) -> FittedModel:
        X, y, w = _prepare(X, y, weights)
        mu, scale, keep = _standardize(X, w)
        Xs = ((X - mu) / scale)[:, keep]
        sw = w.sum()
        ybar = float(w @ y / sw)
        beta = np.zeros(X.shape[1])
        if Xs.shape[1]:
            gram = (Xs * w[:, None]).T @ Xs
            rhs = (Xs * w[:, None]).T @ (y - ybar)
            if self.penalty == 0:
                rank = np.linalg.matrix_rank(gram, tol=1e-10 * max(1.0, np.abs(gram).max()))
                if rank < gram.shape[0]:
                    raise SingularDesignError(
                        "singular design with zero penalty; increase the ridge penalty"
                    )
            gram[np.diag_indices_from(gram)] += self.penalty
            beta[keep] = np.linalg.solve(gram, rhs)
        coef = beta / scale
        intercept = ybar - float(mu @ coef)
        return FittedModel(lambda Z: intercept + Z @ coef, kind)


@dataclass(frozen=True)
class LogisticRidge:
    """Penalized logistic regression fitted by Newton steps; accepts fractional targets."""

    penalty: float = 1e-3
    seed: int = 0
    max_iter: int = 100

    def __post_init__(self):
        if not self.penalty >= 0:
            raise LearnerError("logistic penalty must be >= 0")

    def fit(self, X, y, weights=None, kind: str = PROBABILITY) -> FittedModel:
        X, y, w = _prepare(X, y, weights)
        if y.min() < 0 or y.max() > 1:
            raise LearnerError("logistic targets must lie in [0, 1]")
        mu, scale, keep = _standardize(X, w)
        Xs = np.column_stack([np.ones(len(y)), ((X - mu) / scale)[:, keep]])
        p = Xs.shape[1]
        pen = np.full(p, self.penalty)
        pen[0] = 0.0
        ybar = float(np.clip(w @ y / w.sum(), 1e-9, 1 - 1e-9))
        beta = np.zeros(p)
        beta[0] = np.log(ybar / (1 - ybar))
        for _ in range(self.max_iter):
            eta = Xs @ beta
            prob = expit(eta)
            grad = Xs.T @ (w * (prob - y)) + pen * beta
            hess = (Xs * (w * prob * (1 - prob))[:, None]).T @ Xs
            hess[np.diag_indices_from(hess)] += pen + 1e-10
            step = np.linalg.solve(hess, grad)
            beta = beta - step
            if np.max(np.abs(step)) < 1e-10:
                break
        coef = np.zeros(X.shape[1])
        coef[keep] = beta[1:] / scale[keep]
        intercept = beta[0] - float(mu @ coef)
        return FittedModel(lambda Z: expit(intercept + Z @ coef), PROBABILITY)


@dataclass(frozen=True)
class BoostedTrees:
    rounds: int = 50
    max_depth: int = 2
    shrinkage: float = 0.1
    min_leaf: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise LearnerError("rounds, max_depth and min_leaf must be >= 1")
        if not 0 < self.shrinkage <= 1:
            raise LearnerError("shrinkage must lie in (0, 1]")

    def fit(self, X, y, weights=None, kind: str = MEAN) -> FittedModel:
        X, y, w = _prepare(X, y, weights)
        if X.shape[1] == 0:
            c = float(w @ y / w.sum())
            return FittedModel(lambda Z: np.full(len(Z), c), kind)
        model = trees.boost(X, y, w, self.rounds, self.max_depth, self.shrinkage, self.min_leaf)
        return FittedModel(model.predict, kind)


@dataclass(frozen=True)
class CellMeans:
    """Saturated learner: weighted mean of the target within each distinct feature row.

    Exact conditional expectations for discrete designs; unseen rows get the
    overall mean.
    """

    seed: int = 0

    def fit(self, X, y, weights=None, kind: str = MEAN) -> FittedModel:
        X, y, w = _prepare(X, y, weights)
        keys, inverse = np.unique(X, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        sw = np.bincount(inverse, weights=w, minlength=len(keys))
        sy = np.bincount(inverse, weights=w * y, minlength=len(keys))
        cell = np.divide(sy, sw, out=np.full(len(keys), np.nan), where=sw > 0)
        overall = float(w @ y / w.sum())
        cell = np.where(np.isnan(cell), overall, cell)
        lookup = {k.tobytes(): v for k, v in zip(np.ascontiguousarray(keys), cell)}

        def predict(Z):
            Z = np.ascontiguousarray(Z, dtype=float)
            return np.array([lookup.get(row.tobytes(), overall) for row in Z])

        return FittedModel(predict, kind)


LearnerSpec = RidgeLinear | LogisticRidge | BoostedTrees | CellMeans

CONVEX = "convex"
SELECT = "select"


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple = field(default_factory=lambda: (RidgeLinear(),))
    cv_folds: int = 3
    stacking: str = CONVEX
    seed: int = 0

    def __post_init__(self):
        if not self.members:
            raise LearnerError("an ensemble needs at least one member")
        if self.cv_folds < 2:
            raise LearnerError("cv_folds must be >= 2")
        if self.stacking not in (CONVEX, SELECT):
            raise LearnerError(f"unknown stacking rule {self.stacking!r}")

    def fit(self, X, y, weights=None, kind: str = MEAN) -> FittedModel:
        return fit_ensemble(self, X, y, weights=weights, kind=kind)


def default_ensemble(seed: int = 0) -> EnsembleSpec:
    return EnsembleSpec(
        members=(RidgeLinear(1e-3), LogisticRidge(1e-3), BoostedTrees()),
        cv_folds=3,
        stacking=CONVEX,
        seed=seed,
    )


def fit(spec, features, targets, weights=None, kind: str = MEAN) -> FittedModel:
    """Fit one learner (or an ensemble) and return a deterministic predictor."""
    return spec.fit(features, targets, weights, kind)


def _split(n: int, folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % folds
    return labels


def _cv_predictions(spec, X, y, w, labels, folds, kind):
    out = np.empty(len(y))
    for k in range(folds):
        test = labels == k
        if not test.any() or test.all():
            raise LearnerError("empty cross-validation fold")
        model = spec.fit(X[~test], y[~test], w[~test], kind)
        out[test] = model.predict(X[test])
    return out


def cv_risk(spec, features, targets, folds: int = 5, seed: int = 0, weights=None,
            kind: str = MEAN) -> float:
    """Mean held-out squared error over ``folds`` random folds."""
    if folds < 2:
        raise LearnerError("folds must be >= 2")
    X, y, w = _prepare(features, targets, weights)
    if len(y) < folds:
        raise LearnerError("empty cross-validation fold")
    labels = _split(len(y), folds, seed)
    pred = _cv_predictions(spec, X, y, w, labels, folds, kind)
    risks = [
        np.average((y[labels == k] - pred[labels == k]) ** 2, weights=w[labels == k])
        for k in range(folds)
    ]
    return float(np.mean(risks))


def simplex_least_squares(P: np.ndarray, y: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """Weights on the probability simplex minimizing ``||y - P a||^2``.

    The sum-to-one constraint enters as a heavily weighted extra row of a
    nonnegative least-squares problem; the result is renormalized exactly.
    """
    P = np.asarray(P, dtype=float)
    k = P.shape[1]
    if k == 1:
        return np.ones(1)
    sw = np.sqrt(np.ones(len(y)) if w is None else w)
    A = P * sw[:, None]
    b = y * sw
    big = 1e3 * max(1.0, float(np.linalg.norm(A)), float(np.linalg.norm(b)))
    A = np.vstack([A, np.full((1, k), big)])
    b = np.append(b, big)
    alpha, _ = nnls(A, b, maxiter=50 * k)
    alpha = np.clip(alpha, 0.0, None)
    s = alpha.sum()
    if s <= 0:
        alpha = np.zeros(k)
        alpha[0] = 1.0
        return alpha
    return alpha / s


def _usable(members: Sequence, y: np.ndarray, kind: str) -> list[int]:
    idx = []
    for i, m in enumerate(members):
        if isinstance(m, LogisticRidge) and (y.min() < 0 or y.max() > 1):
            continue
        idx.append(i)
    return idx


def fit_ensemble(spec: EnsembleSpec, features, targets, weights=None, kind: str = MEAN) -> FittedModel:
    """Cross-validated stacking of ``spec.members``.

    Logistic members only take part when every target lies in [0, 1].
    """
    X, y, w = _prepare(features, targets, weights)
    members = list(spec.members)
    idx = _usable(members, y, kind)
    if not idx:
        raise LearnerError("no ensemble member can fit this target")
    stack = np.zeros(len(members))
    risks = np.full(len(members), np.nan)
    if len(idx) == 1:
        stack[idx[0]] = 1.0
    elif len(y) < 2 * spec.cv_folds:
        # too few rows to cross-validate: fall back to the first usable member
        stack[idx[0]] = 1.0
    else:
        labels = _split(len(y), spec.cv_folds, spec.seed)
        P = np.column_stack(
            [_cv_predictions(members[i], X, y, w, labels, spec.cv_folds, kind) for i in idx]
        )
        if kind == PROBABILITY:
            P = np.clip(P, PROB_EPS, 1 - PROB_EPS)
        r = np.average((y[:, None] - P) ** 2, axis=0, weights=w)
        risks[idx] = r
        if spec.stacking == SELECT:
            best = int(np.argmin(r))  # first minimum wins ties
            stack[idx[best]] = 1.0
        else:
            stack[idx] = simplex_least_squares(P, y, w)
    active = [i for i in range(len(members)) if stack[i] > 0]
    models = [(stack[i], members[i].fit(X, y, w, kind)) for i in active]

    def predict(Z):
        out = np.zeros(len(Z))
        for a, m in models:
            out += a * m.predict(Z)
        return out

    return FittedModel(
        predict,
        kind,
        stack_weights=tuple(float(s) for s in stack),
        cv_risks=tuple(float(r) for r in risks),
    )


def learner_from_dict(doc) -> object:
    """Build a learner spec from a config entry such as ``{family: ridge, penalty: 0.1}``."""
    if not isinstance(doc, dict) or "family" not in doc:
        raise LearnerError(f"learner entry needs a 'family' key: {doc!r}")
    kw = {k: v for k, v in doc.items() if k != "family"}
    family = str(doc["family"]).lower()
    table = {
        "ridge": RidgeLinear,
        "ridgelinear": RidgeLinear,
        "logistic": LogisticRidge,
        "logisticridge": LogisticRidge,
        "trees": BoostedTrees,
        "boostedtrees": BoostedTrees,
        "cellmeans": CellMeans,
    }
    if family not in table:
        raise LearnerError(f"unknown learner family {doc['family']!r}")
    try:
        return table[family](**kw)
    except TypeError as exc:
        raise LearnerError(f"bad parameters for {family}: {exc}") from None


def learner_to_dict(spec) -> dict:
    names = {RidgeLinear: "ridge", LogisticRidge: "logistic", BoostedTrees: "trees", CellMeans: "cellmeans"}
    out = {"family": names[type(spec)]}
    out.update(spec.__dict__)
    return out
