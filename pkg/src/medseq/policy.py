"""Modified treatment policies, treatment/mediator pmfs and density ratios.

A policy is called as ``policy(t, natural, history)`` with a vector of natural
treatment values and a :class:`PolicyHistory` describing what precedes the
treatment at ``t``.  On observed data the history holds observed values; in
simulated rollouts it holds the intervened past.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .expr import Expression, compile_expression
from .learners import PROBABILITY
from .panel import FoldAssignment, MediatorPath, PanelDataset

POSITIVITY_FLOOR = 1e-6


@dataclass(frozen=True)
class PolicyHistory:
    columns: Mapping[str, np.ndarray]
    treatments: tuple[np.ndarray, ...] = ()  # A_1..A_{t-1}

    def __len__(self) -> int:
        for v in self.columns.values():
            return len(v)
        return len(self.treatments[0]) if self.treatments else 0


class PolicyFunction:
    name = "policy"

    def __call__(self, t: int, natural, history: PolicyHistory) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __eq__(self, other):
        return isinstance(other, PolicyFunction) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class Identity(PolicyFunction):
    name = "identity"

    def __call__(self, t, natural, history):
        return np.asarray(natural, dtype=float).copy()

    def to_dict(self):
        return {"builtin": "identity"}


class Static(PolicyFunction):
    """Fixes the treatment at the listed times; other times stay natural."""

    name = "static"

    def __init__(self, values: Mapping[int, int]):
        self.values = {int(t): int(a) for t, a in dict(values).items()}

    def __call__(self, t, natural, history):
        natural = np.asarray(natural, dtype=float)
        if t in self.values:
            return np.full(natural.shape, float(self.values[t]))
        return natural.copy()

    def to_dict(self):
        return {"builtin": "static", "values": {str(t): a for t, a in sorted(self.values.items())}}


class DelayFirstLevel(PolicyFunction):
    """Moves the first occurrence of ``level`` one period later by assigning ``fallback``.

    The treatment is replaced only at the first time the natural value equals
    ``level`` and no earlier treatment in the history did.
    """

    name = "delay_first_level"

    def __init__(self, level: int = 2, fallback: int = 1):
        self.level = int(level)
        self.fallback = int(fallback)

    def __call__(self, t, natural, history):
        natural = np.asarray(natural, dtype=float)
        first = natural == self.level
        for past in history.treatments:
            first &= np.asarray(past) != self.level
        return np.where(first, float(self.fallback), natural)

    def to_dict(self):
        return {"builtin": "delay_first_level", "level": self.level, "fallback": self.fallback}


@dataclass(frozen=True)
class Rule:
    set_to: int
    level: int | None = None
    when: Expression | None = None
    times: tuple[int, ...] | None = None

    def to_dict(self):
        out: dict = {"set": self.set_to}
        if self.level is not None:
            out["level"] = self.level
        if self.when is not None:
            out["when"] = self.when.text
        if self.times is not None:
            out["times"] = list(self.times)
        return out


class RuleTable(PolicyFunction):
    """First matching rule wins; unmatched units keep their natural value.

    Predicates may use any history column by name plus ``a`` (the natural
    value) and ``t``.
    """

    name = "rules"

    def __init__(self, rules: Sequence[Rule]):
        self.rules = tuple(rules)

    def __call__(self, t, natural, history):
        natural = np.asarray(natural, dtype=float)
        out = natural.copy()
        done = np.zeros(natural.shape, dtype=bool)
        env = dict(history.columns)
        env["a"] = natural
        env["t"] = float(t)
        for rule in self.rules:
            if rule.times is not None and t not in rule.times:
                continue
            hit = ~done
            if rule.level is not None:
                hit &= natural == rule.level
            if rule.when is not None:
                hit &= np.broadcast_to(np.asarray(rule.when(env), dtype=bool), natural.shape)
            out[hit] = rule.set_to
            done |= hit
        return out

    def to_dict(self):
        return {"rules": [r.to_dict() for r in self.rules]}


@dataclass(frozen=True)
class PolicyPair:
    d_prime: PolicyFunction
    d_star: PolicyFunction

    def to_dict(self):
        return {"d_prime": self.d_prime.to_dict(), "d_star": self.d_star.to_dict()}


def policy_from_config(doc) -> PolicyFunction:
    """Build a policy from ``{builtin: ...}`` or ``{rules: [...]}``."""
    if isinstance(doc, PolicyFunction):
        return doc
    if isinstance(doc, str):
        doc = {"builtin": doc}
    if not isinstance(doc, Mapping):
        raise ConfigError(f"policy must be a mapping, got {doc!r}")
    if "rules" in doc:
        rules = []
        for entry in doc["rules"] or []:
            if not isinstance(entry, Mapping) or "set" not in entry:
                raise ConfigError(f"each policy rule needs a 'set' level: {entry!r}")
            times = entry.get("times")
            rules.append(
                Rule(
                    set_to=int(entry["set"]),
                    level=None if entry.get("level") is None else int(entry["level"]),
                    when=None if entry.get("when") is None else compile_expression(entry["when"]),
                    times=None if times is None else tuple(int(x) for x in times),
                )
            )
        return RuleTable(rules)
    builtin = doc.get("builtin")
    if builtin == "identity":
        return Identity()
    if builtin == "delay_first_level":
        return DelayFirstLevel(doc.get("level", 2), doc.get("fallback", 1))
    if builtin == "static":
        values = doc.get("values")
        if not isinstance(values, Mapping) or not values:
            raise ConfigError("static policy needs a 'values' mapping from time to level")
        return Static(values)
    raise ConfigError(f"unknown policy {doc!r}")


def dataset_history(dataset: PanelDataset, t: int) -> PolicyHistory:
    names = dataset.history_names(("A", t))
    cols = {c: dataset.column(c) for c in names}
    return PolicyHistory(cols, tuple(dataset.treatment(s) for s in range(1, t)))


def _check_support(values: np.ndarray, support: Sequence[int], what: str) -> np.ndarray:
    bad = ~np.isin(values, np.asarray(support, dtype=float))
    if bad.any():
        raise ConfigError(
            f"{what} produced treatment value(s) {sorted(set(values[bad].tolist()))} "
            f"outside the support {list(support)}"
        )
    return values


def apply_policy(policy: PolicyFunction, dataset: PanelDataset, t: int) -> np.ndarray:
    """``d_t(A_t, H_{A,t})`` for every unit, using observed values."""
    if not 1 <= t <= dataset.tau:
        raise DataError(f"no treatment column at t={t}")
    out = np.asarray(policy(t, dataset.treatment(t), dataset_history(dataset, t)), dtype=float)
    return _check_support(out, dataset.treatment_support(), policy.name)


def shifted_pmf(policy: PolicyFunction, pmf: np.ndarray, history: PolicyHistory, t: int,
                support: Sequence[int]) -> np.ndarray:
    """Pushforward of a conditional pmf through ``d_t``.

    ``pmf[i, k]`` is the probability of ``support[k]`` for unit ``i``; the
    result has the same layout and rows still sum to one.
    """
    pmf = np.asarray(pmf, dtype=float)
    levels = np.asarray(support, dtype=float)
    out = np.zeros_like(pmf)
    for k, a0 in enumerate(levels):
        mapped = np.asarray(policy(t, np.full(len(pmf), a0), history), dtype=float)
        _check_support(mapped, support, policy.name)
        idx = np.searchsorted(levels, mapped)
        np.add.at(out, (np.arange(len(pmf)), idx), pmf[:, k])
    return out


def _fit_levels(learner, X, y, w, support):
    """One-vs-rest probability models for each level; returns a predictor of the raw pmf."""
    levels = np.asarray(support, dtype=float)
    present = [bool(np.any(y == a)) for a in levels]
    if len(levels) == 1:
        return lambda Z: np.ones((len(Z), 1))
    if len(levels) == 2:
        # one model; the other level is its complement
        if not all(present):
            col = 1.0 if present[1] else 0.0
            return lambda Z: np.column_stack([np.full(len(Z), 1 - col), np.full(len(Z), col)])
        model = learner.fit(X, (y == levels[1]).astype(float), w, PROBABILITY)

        def binary(Z):
            p = model.predict(Z)
            return np.column_stack([1 - p, p])

        return binary
    models = [
        learner.fit(X, (y == a).astype(float), w, PROBABILITY) if ok else None
        for a, ok in zip(levels, present)
    ]

    def multi(Z):
        raw = np.column_stack(
            [m.predict(Z) if m is not None else np.zeros(len(Z)) for m in models]
        )
        return raw / raw.sum(axis=1, keepdims=True)

    return multi


def crossfit_pmf(learner, X: np.ndarray, y: np.ndarray, support: Sequence[int],
                 fit_mask: np.ndarray, folds: FoldAssignment | None,
                 weights: np.ndarray | None = None) -> np.ndarray:
    """Out-of-fold conditional pmf of a categorical variable for every unit.

    With ``folds=None`` a single model is fitted on all usable rows and used
    for every unit (no cross-fitting).
    """
    n = len(y)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    out = np.empty((n, len(support)))
    splits = [(np.ones(n, bool), np.ones(n, bool))] if folds is None else [
        (train, test) for _, train, test in folds.train_test()
    ]
    for train, test in splits:
        rows = train & fit_mask
        if not rows.any():
            raise DataError("a training fold has no usable units for a pmf model")
        predict = _fit_levels(learner, X[rows], y[rows], w[rows], support)
        out[test] = predict(X[test])
    return out


def estimate_treatment_pmf(dataset: PanelDataset, t: int, learner,
                           folds: FoldAssignment | None) -> np.ndarray:
    """Cross-fitted ``g_t(a | H_{A,t})`` as an ``(n, K)`` array over the treatment support."""
    support = dataset.treatment_support()
    _, X = dataset.history_matrix(("A", t))
    y = dataset.treatment(t)
    at_risk = dataset.uncensored(t - 1)
    if dataset.weights is not None:
        at_risk = at_risk & (dataset.weights > 0)
    for a in support:
        if not np.any(y[at_risk] == a):
            raise DataError(f"treatment level {a} never occurs at t={t}; drop it from the support")
    return crossfit_pmf(learner, X, y, support, at_risk, folds, dataset.weights)


def estimate_mediator_pmf(dataset: PanelDataset, t: int, learner,
                          folds: FoldAssignment | None) -> np.ndarray:
    """Cross-fitted ``g_{M,t}(m | H_{M,t})`` over the declared mediator support."""
    support = dataset.schema.mediator_support[t - 1]
    _, X = dataset.history_matrix(("M", t))
    return crossfit_pmf(learner, X, dataset.mediator(t), support, dataset.uncensored(t),
                        folds, dataset.weights)


def estimate_uncensored_prob(dataset: PanelDataset, t: int, learner,
                             folds: FoldAssignment | None) -> np.ndarray:
    """Cross-fitted probability of remaining uncensored through period ``t``."""
    if not dataset.has_censoring:
        return np.ones(dataset.n)
    _, X = dataset.history_matrix(("Z", t))
    stay = dataset.uncensored(t).astype(float)
    pmf = crossfit_pmf(learner, X, stay, (0, 1), dataset.uncensored(t - 1), folds,
                       dataset.weights)
    return pmf[:, 1]


@dataclass
class TreatmentModels:
    """Path-independent nuisances shared by every estimator."""

    treatment: list[np.ndarray]  # per t: (n, K) pmf
    mediator: list[np.ndarray]  # per t: (n, |supp M_t|)
    uncensored: list[np.ndarray]  # per t: (n,)


def fit_treatment_models(dataset: PanelDataset, learner, folds) -> TreatmentModels:
    ts = range(1, dataset.tau + 1)
    return TreatmentModels(
        treatment=[estimate_treatment_pmf(dataset, t, learner, folds) for t in ts],
        mediator=[estimate_mediator_pmf(dataset, t, learner, folds) for t in ts],
        uncensored=[estimate_uncensored_prob(dataset, t, learner, folds) for t in ts],
    )


def _floored(p: np.ndarray) -> tuple[np.ndarray, int]:
    low = p < POSITIVITY_FLOOR
    return np.where(low, POSITIVITY_FLOOR, p), int(low.sum())


def _level_index(values: np.ndarray, support: Sequence[int]) -> np.ndarray:
    return np.searchsorted(np.asarray(support, dtype=float), values)


def treatment_ratios(policy: PolicyFunction, dataset: PanelDataset,
                     models: TreatmentModels) -> tuple[np.ndarray, int]:
    """Single-step ``G_{A,t}`` for one policy as an ``(n, tau)`` array.

    The remain-uncensored factor ``1{uncensored_t} / P(uncensored_t | ...)``
    is folded in when the data carry censoring.  Also returns the number of
    probabilities raised to the positivity floor.
    """
    support = dataset.treatment_support()
    rows = np.arange(dataset.n)
    out = np.zeros((dataset.n, dataset.tau))
    hits = 0
    for t in range(1, dataset.tau + 1):
        pmf = models.treatment[t - 1]
        shifted = shifted_pmf(policy, pmf, dataset_history(dataset, t), t, support)
        idx = np.clip(_level_index(dataset.treatment(t), support), 0, len(support) - 1)
        g_obs = pmf[rows, idx]
        g, _ = _floored(g_obs)
        ratio = shifted[rows, idx] / g
        at_risk = dataset.uncensored(t - 1)
        stay = dataset.uncensored(t)
        hits += int(np.sum(at_risk & (g_obs < POSITIVITY_FLOOR)))
        if dataset.has_censoring:
            p_obs = models.uncensored[t - 1]
            p, _ = _floored(p_obs)
            ratio = ratio / p
            hits += int(np.sum(at_risk & (p_obs < POSITIVITY_FLOOR)))
        out[:, t - 1] = np.where(at_risk & stay, ratio, 0.0)
    return out, hits


def mediator_ratios(dataset: PanelDataset, models: TreatmentModels,
                    path: MediatorPath) -> tuple[np.ndarray, int]:
    """``G_{M,t} = 1{M_t = m_t} / g_{M,t}(M_t | H_{M,t})`` as an ``(n, tau)`` array."""
    rows = np.arange(dataset.n)
    out = np.zeros((dataset.n, dataset.tau))
    hits = 0
    for t in range(1, dataset.tau + 1):
        m = dataset.mediator(t)
        support = dataset.schema.mediator_support[t - 1]
        pmf = models.mediator[t - 1]
        idx = _level_index(m, support)
        idx = np.clip(idx, 0, len(support) - 1)
        on = (m == path[t - 1]) & dataset.uncensored(t)
        g, _ = _floored(pmf[rows, idx])
        hits += int(np.sum(on & (pmf[rows, idx] < POSITIVITY_FLOOR)))
        out[:, t - 1] = np.where(on, 1.0 / g, 0.0)
    return out, hits


def cumulative_products(single: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """All products ``prod_{r=l}^{u} single[:, r-1]`` for ``1 <= l <= u <= tau``."""
    tau = single.shape[1]
    out = {}
    for l in range(1, tau + 1):
        acc = np.ones(len(single))
        for u in range(l, tau + 1):
            acc = acc * single[:, u - 1]
            out[(l, u)] = acc
    return out


@dataclass
class DensityRatioTable:
    """Single-step ratios and their (possibly capped) cumulative products.

    ``prime``/``star`` hold ``G'_{A,t}``/``G*_{A,t}`` and ``mediator`` holds
    ``G_{M,t}`` for one mediator path, all as ``(n, tau)`` arrays.  Products
    over empty ranges are 1.
    """

    prime: np.ndarray
    star: np.ndarray
    mediator: np.ndarray
    c_prime: dict = field(default_factory=dict)
    c_star: dict = field(default_factory=dict)
    h: dict = field(default_factory=dict)
    floor_hits: int = 0
    truncated: int = 0

    @classmethod
    def build(cls, prime, star, mediator, floor_hits: int = 0) -> "DensityRatioTable":
        return cls(
            prime=prime,
            star=star,
            mediator=mediator,
            c_prime=cumulative_products(prime),
            c_star=cumulative_products(star),
            h=cumulative_products(mediator),
            floor_hits=floor_hits,
        )

    @property
    def tau(self) -> int:
        return self.prime.shape[1]

    @staticmethod
    def _get(family: dict, l: int, u: int, n: int):
        if l > u:
            return np.ones(n)
        return family[(l, u)]

    def C_prime(self, l: int, u: int) -> np.ndarray:
        return self._get(self.c_prime, l, u, len(self.prime))

    def C_star(self, l: int, u: int) -> np.ndarray:
        return self._get(self.c_star, l, u, len(self.star))

    def H(self, l: int, u: int) -> np.ndarray:
        return self._get(self.h, l, u, len(self.mediator))


def quantile_cap(values: np.ndarray, q: float) -> float:
    """Empirical ``q``-quantile with linear interpolation."""
    return float(np.quantile(np.asarray(values, dtype=float), q))


TRUNCATION_SCOPES = ("family", "range")


def _cap_family(family: dict, q: float, scope: str = "family") -> tuple[dict, int]:
    if not family or q >= 1.0:
        return dict(family), 0
    if scope == "range":
        capped, hits = {}, 0
        for k, v in family.items():
            cap = quantile_cap(v, q)
            capped[k] = np.minimum(v, cap)
            hits += int(np.sum(v > cap))
        return capped, hits
    pool = np.concatenate(list(family.values()))
    cap = quantile_cap(pool, q)
    capped = {k: np.minimum(v, cap) for k, v in family.items()}
    return capped, int(np.sum(pool > cap))


def truncate_weights(table: DensityRatioTable, quantile: float,
                     scope: str = "family") -> DensityRatioTable:
    """Cap cumulative products at an empirical quantile; single steps are left alone.

    With ``scope="family"`` one cap is computed from all ranges of a family
    (C', C* or H) pooled together; ``scope="range"`` caps every ``(l, u)``
    range at its own quantile.
    """
    if not 0 < quantile <= 1:
        raise ConfigError("truncation quantile must lie in (0, 1]")
    if scope not in TRUNCATION_SCOPES:
        raise ConfigError(f"truncation scope must be one of {TRUNCATION_SCOPES}")
    c_prime, n1 = _cap_family(table.c_prime, quantile, scope)
    c_star, n2 = _cap_family(table.c_star, quantile, scope)
    h, n3 = _cap_family(table.h, quantile, scope)
    return DensityRatioTable(
        prime=table.prime,
        star=table.star,
        mediator=table.mediator,
        c_prime=c_prime,
        c_star=c_star,
        h=h,
        floor_hits=table.floor_hits,
        truncated=table.truncated + n1 + n2 + n3,
    )


def density_ratios(pair: PolicyPair, dataset: PanelDataset, models: TreatmentModels,
                   path: MediatorPath) -> DensityRatioTable:
    """Untruncated ratio table for one mediator path."""
    prime, h1 = treatment_ratios(pair.d_prime, dataset, models)
    star, h2 = treatment_ratios(pair.d_star, dataset, models)
    med, h3 = mediator_ratios(dataset, models, path)
    return DensityRatioTable.build(prime, star, med, floor_hits=h1 + h2 + h3)
