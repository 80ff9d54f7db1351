"""Estimation of interventional mediation parameters for longitudinal policies.

The target for a policy pair ``(d', d*)`` is ``theta = sum_m phi(m) lam(m)``
over mediator paths ``m``.  ``phi`` comes from a backward chain of outcome
regressions under ``d'`` with the mediators pinned to ``m``; ``lam`` is the
probability of the path under ``d*``.  The one-step estimator replaces each
regression pseudo-outcome with its doubly robust analogue and averages.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, NumericalError
from .learners import MEAN, default_ensemble
from .panel import (
    DEFAULT_PATH_CAP,
    FoldAssignment,
    MediatorPath,
    PanelDataset,
    assign_folds,
    enumerate_mediator_paths,
)
from .policy import (
    TRUNCATION_SCOPES,
    DensityRatioTable,
    PolicyFunction,
    PolicyPair,
    apply_policy,
    TreatmentModels,
    fit_treatment_models,
    mediator_ratios,
    treatment_ratios,
    truncate_weights,
)

Z_CRIT = 1.959964
DR = "dr"
PLUGIN = "plugin"


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator settings; ``folds=1`` disables cross-fitting."""

    folds: int = 3
    truncation_quantile: float = 0.99
    truncation_scope: str = "family"
    paths: str = "observed_only"
    path_cap: int = DEFAULT_PATH_CAP
    seed: int = 0
    learners: object = field(default_factory=default_ensemble)
    threads: int = 1
    min_subsample: int = 30

    def __post_init__(self):
        if self.folds < 1:
            raise ConfigError("estimator.folds must be >= 1")
        if not 0 < self.truncation_quantile <= 1:
            raise ConfigError("estimator.truncation_quantile must lie in (0, 1]")
        if self.truncation_scope not in TRUNCATION_SCOPES:
            raise ConfigError(f"estimator.truncation_scope must be one of {TRUNCATION_SCOPES}")
        if self.paths not in ("full", "observed_only"):
            raise ConfigError("estimator.paths must be 'full' or 'observed_only'")
        if self.path_cap < 1:
            raise ConfigError("estimator.path_cap must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass
class NuisanceTable:
    """Cross-fitted regressions for one mediator path, as ``(n, tau)`` arrays.

    ``q_z_obs``/``q_m_obs`` are evaluated at the observed treatment and
    ``q_z_shift``/``q_m_shift`` at the policy-shifted one.
    """

    path: MediatorPath
    q_l: np.ndarray
    q_z_obs: np.ndarray
    q_z_shift: np.ndarray
    q_m_obs: np.ndarray
    q_m_shift: np.ndarray
    outcome: np.ndarray
    on_path: np.ndarray  # 1{M_t = m_t}, zero where M_t is unobserved
    fold: np.ndarray
    fallbacks: int = 0


@dataclass
class DValues:
    path: MediatorPath
    d_l: np.ndarray
    d_z: np.ndarray
    d_m: np.ndarray

    @property
    def d_z1(self) -> np.ndarray:
        return self.d_z[:, 0]

    @property
    def d_m1(self) -> np.ndarray:
        return self.d_m[:, 0]


@dataclass
class EifValues:
    paths: list[MediatorPath]
    d_z1: dict[str, np.ndarray]
    d_m1: dict[str, np.ndarray]
    phi: dict[str, float]
    lam: dict[str, float]
    influence: np.ndarray  # centered per-unit influence value


@dataclass
class EstimateReport:
    theta_hat: float
    se: float
    ci: tuple[float, float]
    phi: dict[str, float]
    lam: dict[str, float]
    diagnostics: dict
    influence: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat,
            "se": self.se,
            "ci": list(self.ci),
            "phi": dict(sorted(self.phi.items())),
            "lambda": dict(sorted(self.lam.items())),
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class Effect:
    estimate: float
    se: float

    def ci(self) -> tuple[float, float]:
        return self.estimate - Z_CRIT * self.se, self.estimate + Z_CRIT * self.se


@dataclass
class EffectDecomposition:
    total: Effect
    direct: Effect
    indirect: Effect
    components: dict[str, float]
    influence: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for name in ("total", "direct", "indirect"):
            e = getattr(self, name)
            lo, hi = e.ci()
            out[name] = {"estimate": e.estimate, "se": e.se, "ci": [lo, hi]}
        out["components"] = dict(sorted(self.components.items()))
        out["diagnostics"] = self.diagnostics
        return out


@dataclass(frozen=True)
class Components:
    phi: dict[str, float]
    lam: dict[str, float]
    theta: float


def assemble_decomposition(direct: Effect, indirect: Effect, total_se: float,
                           components: Mapping[str, float] | None = None,
                           influence: Mapping[str, np.ndarray] | None = None,
                           diagnostics: dict | None = None) -> EffectDecomposition:
    """Total is defined as direct + indirect, so the two always add up."""
    total = Effect(direct.estimate + indirect.estimate, total_se)
    return EffectDecomposition(
        total=total,
        direct=direct,
        indirect=indirect,
        components=dict(components or {}),
        influence=dict(influence or {}),
        diagnostics=dict(diagnostics or {}),
    )


def standard_error(influence: np.ndarray, weights: np.ndarray | None = None) -> float:
    s = np.asarray(influence, dtype=float)
    n = len(s)
    if n < 2:
        raise NumericalError("need at least two units for a standard error")
    if not np.all(np.isfinite(s)):
        raise NumericalError("degenerate variance: non-finite influence values")
    if weights is None:
        return float(np.std(s, ddof=1) / math.sqrt(n))
    w = np.asarray(weights, dtype=float)
    mu = np.average(s, weights=w)
    return float(math.sqrt(np.average((s - mu) ** 2, weights=w) / n))


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# D-functions


def _term(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    # zero weights annihilate whatever sits in unobserved slots
    return np.where(weight != 0, weight * x, 0.0)


def d_l_at(t: int, q: NuisanceTable, r: DensityRatioTable) -> np.ndarray:
    tau = q.q_l.shape[1]
    out = q.q_l[:, t - 1].copy()
    for s in range(t, tau + 1):
        nxt = q.outcome if s == tau else q.q_z_shift[:, s]
        out += _term(nxt - q.q_l[:, s - 1], r.C_prime(t + 1, s) * r.H(t, s))
    for s in range(t + 1, tau + 1):
        out += _term(q.q_l[:, s - 1] - q.q_z_obs[:, s - 1], r.C_prime(t + 1, s) * r.H(t, s - 1))
    return out


def d_z_at(t: int, q: NuisanceTable, r: DensityRatioTable) -> np.ndarray:
    tau = q.q_l.shape[1]
    out = q.q_z_shift[:, t - 1].copy()
    for s in range(t, tau + 1):
        nxt = q.outcome if s == tau else q.q_z_shift[:, s]
        out += _term(nxt - q.q_l[:, s - 1], r.C_prime(t, s) * r.H(t, s))
        out += _term(q.q_l[:, s - 1] - q.q_z_obs[:, s - 1], r.C_prime(t, s) * r.H(t, s - 1))
    return out


def d_m_at(t: int, q: NuisanceTable, r: DensityRatioTable) -> np.ndarray:
    tau = q.q_m_obs.shape[1]
    n = len(q.q_m_obs)
    out = q.q_m_shift[:, t - 1].copy()
    stay = np.ones(n)
    for s in range(t, tau + 1):
        nxt = np.ones(n) if s == tau else q.q_m_shift[:, s]
        resid = q.on_path[:, s - 1] * nxt - q.q_m_obs[:, s - 1]
        out += _term(resid, r.C_star(t, s) * stay)
        stay = stay * q.on_path[:, s - 1]
    return out


def compute_d_functions(nuisance: NuisanceTable, ratios: DensityRatioTable) -> DValues:
    """Doubly robust pseudo-outcomes for every time from a completed nuisance table."""
    if nuisance.q_l.shape != ratios.prime.shape:
        raise DataError("nuisance and ratio tables are not aligned")
    tau = nuisance.q_l.shape[1]
    cols = range(1, tau + 1)
    return DValues(
        path=nuisance.path,
        d_l=np.column_stack([d_l_at(t, nuisance, ratios) for t in cols]),
        d_z=np.column_stack([d_z_at(t, nuisance, ratios) for t in cols]),
        d_m=np.column_stack([d_m_at(t, nuisance, ratios) for t in cols]),
    )


# ---------------------------------------------------------------------------
# regressions


class _Design:
    """Feature matrices and masks shared by every path and policy."""

    def __init__(self, dataset: PanelDataset):
        self.dataset = dataset
        tau = dataset.tau
        self.h_m = [dataset.history_matrix(("M", t))[1] for t in range(1, tau + 1)]
        self.h_z = []
        self.a_col = []
        for t in range(1, tau + 1):
            names, X = dataset.history_matrix(("Z", t))
            self.h_z.append(X)
            self.a_col.append(names.index(dataset.schema.A[t - 1]))
        self.uncensored = [dataset.uncensored(t) for t in range(1, tau + 1)]
        self.mediators = [dataset.mediator(t) for t in range(1, tau + 1)]
        self.weights = (
            np.ones(dataset.n) if dataset.weights is None else np.asarray(dataset.weights, float)
        )
        self.usable = self.weights > 0
        self.outcome = np.where(dataset.uncensored(tau), dataset.outcome(), 0.0)

    def on_path(self, path: MediatorPath) -> np.ndarray:
        return np.column_stack(
            [(m == v) & u for m, v, u in zip(self.mediators, path, self.uncensored)]
        ).astype(float)

    def with_treatment(self, t: int, values: np.ndarray) -> np.ndarray:
        X = self.h_z[t - 1].copy()
        X[:, self.a_col[t - 1]] = values
        return X


def _splits(n: int, folds: FoldAssignment | None):
    if folds is None:
        every = np.ones(n, dtype=bool)
        return [(every, every)]
    return [(train, test) for _, train, test in folds.train_test()]


def _crossfit(learner, X, y, fit_mask, weights, folds, evals: Sequence[np.ndarray], what: str):
    n = len(y)
    outs = [np.empty(n) for _ in evals]
    for train, test in _splits(n, folds):
        rows = train & fit_mask
        if not rows.any():
            raise DataError(f"a training fold has no at-risk units for {what}")
        model = learner.fit(X[rows], y[rows], weights[rows], MEAN)
        for out, E in zip(outs, evals):
            out[test] = model.predict(E[test])
    return outs


class _Engine:
    def __init__(self, dataset: PanelDataset, config: EstimatorConfig, folds=None):
        if not isinstance(config, EstimatorConfig):
            raise ConfigError("config must be an EstimatorConfig")
        self.dataset = dataset
        self.config = config
        self.learner = config.learners
        if folds is None and config.folds > 1:
            folds = assign_folds(dataset, config.folds, config.seed)
        self.folds = folds
        self.design = _Design(dataset)
        self._models: TreatmentModels | None = None
        self._ratio_cache: dict = {}
        self._shift_cache: dict = {}
        self._med_cache: dict = {}
        self._truncated: dict = {}
        self.floor_hits = 0
        self.fallbacks = 0

    # -- cached pieces -------------------------------------------------
    @property
    def models(self) -> TreatmentModels:
        if self._models is None:
            self._models = fit_treatment_models(self.dataset, self.learner, self.folds)
        return self._models

    def warm(self, policies: Sequence[PolicyFunction], paths) -> None:
        """Fill the shared caches serially so worker threads only read them."""
        for policy in policies:
            self.shifted(policy)
            self.treatment_products(policy)
        for path in paths:
            self.mediator_single(path)

    def shifted(self, policy: PolicyFunction) -> list[np.ndarray]:
        key = repr(policy.to_dict())
        if key not in self._shift_cache:
            self._shift_cache[key] = [
                apply_policy(policy, self.dataset, t) for t in range(1, self.dataset.tau + 1)
            ]
        return self._shift_cache[key]

    def treatment_products(self, policy: PolicyFunction):
        key = repr(policy.to_dict())
        if key not in self._ratio_cache:
            single, hits = treatment_ratios(policy, self.dataset, self.models)
            self._ratio_cache[key] = single
            self.floor_hits += hits
        return self._ratio_cache[key]

    def mediator_single(self, path: MediatorPath):
        if path not in self._med_cache:
            single, hits = mediator_ratios(self.dataset, self.models, path)
            self._med_cache[path] = single
            self.floor_hits += hits
        return self._med_cache[path]

    def ratio_table(self, d_prime, d_star, path) -> DensityRatioTable:
        table = DensityRatioTable.build(
            self.treatment_products(d_prime),
            self.treatment_products(d_star),
            self.mediator_single(path),
        )
        table = truncate_weights(table, self.config.truncation_quantile,
                                 self.config.truncation_scope)
        self._truncated[(repr(d_prime.to_dict()), repr(d_star.to_dict()), path)] = table.truncated
        return table

    @property
    def fold_labels(self) -> np.ndarray:
        if self.folds is None:
            return np.ones(self.dataset.n, dtype=np.int64)
        return self.folds.membership

    # -- regressions ---------------------------------------------------
    def _fit_q_l(self, t: int, target: np.ndarray, path: MediatorPath) -> tuple[np.ndarray, int]:
        d = self.design
        X = d.h_m[t - 1]
        m = d.mediators[t - 1]
        base = d.uncensored[t - 1] & d.usable
        out = np.empty(len(target))
        fallbacks = 0
        for train, test in _splits(len(target), self.folds):
            rows = train & base & (m == path[t - 1])
            if rows.sum() >= self.config.min_subsample:
                model = self.learner.fit(X[rows], target[rows], d.weights[rows], MEAN)
                out[test] = model.predict(X[test])
                continue
            # too few on-path units: use the mediator as a feature instead
            fallbacks += 1
            rows = train & base
            if not rows.any():
                raise DataError(f"a training fold has no at-risk units at t={t}")
            Xa = np.column_stack([X, m])
            model = self.learner.fit(Xa[rows], target[rows], d.weights[rows], MEAN)
            Xp = np.column_stack([X[test], np.full(int(test.sum()), float(path[t - 1]))])
            out[test] = model.predict(Xp)
        return out, fallbacks

    def phi_side(self, policy: PolicyFunction, path: MediatorPath, mode: str = DR):
        """Outcome-side chain under ``policy`` pinned to ``path``."""
        d = self.design
        n, tau = self.dataset.n, self.dataset.tau
        shifted = self.shifted(policy)
        table = self.ratio_table(policy, policy, path)
        q = NuisanceTable(
            path=path,
            q_l=np.zeros((n, tau)),
            q_z_obs=np.zeros((n, tau)),
            q_z_shift=np.zeros((n, tau)),
            q_m_obs=np.zeros((n, tau)),
            q_m_shift=np.zeros((n, tau)),
            outcome=d.outcome,
            on_path=d.on_path(path),
            fold=self.fold_labels,
        )
        target = d.outcome
        for t in range(tau, 0, -1):
            q.q_l[:, t - 1], fb = self._fit_q_l(t, target, path)
            q.fallbacks += fb
            pseudo = d_l_at(t, q, table) if mode == DR else q.q_l[:, t - 1]
            q.q_z_obs[:, t - 1], q.q_z_shift[:, t - 1] = _crossfit(
                self.learner, d.h_z[t - 1], pseudo, d.uncensored[t - 1] & d.usable, d.weights,
                self.folds, [d.h_z[t - 1], d.with_treatment(t, shifted[t - 1])], f"t={t}",
            )
            target = d_z_at(t, q, table) if mode == DR else q.q_z_shift[:, t - 1]
        return q, table, target

    def lambda_side(self, policy: PolicyFunction, path: MediatorPath, mode: str = DR):
        """Path-probability chain under ``policy``."""
        d = self.design
        n, tau = self.dataset.n, self.dataset.tau
        shifted = self.shifted(policy)
        table = self.ratio_table(policy, policy, path)
        q = NuisanceTable(
            path=path,
            q_l=np.zeros((n, tau)),
            q_z_obs=np.zeros((n, tau)),
            q_z_shift=np.zeros((n, tau)),
            q_m_obs=np.zeros((n, tau)),
            q_m_shift=np.zeros((n, tau)),
            outcome=d.outcome,
            on_path=d.on_path(path),
            fold=self.fold_labels,
        )
        nxt = np.ones(n)
        for t in range(tau, 0, -1):
            target = q.on_path[:, t - 1] * nxt
            obs, shift = _crossfit(
                self.learner, d.h_z[t - 1], target, d.uncensored[t - 1] & d.usable, d.weights,
                self.folds, [d.h_z[t - 1], d.with_treatment(t, shifted[t - 1])], f"t={t}",
            )
            q.q_m_obs[:, t - 1] = np.clip(obs, 0.0, 1.0)
            q.q_m_shift[:, t - 1] = np.clip(shift, 0.0, 1.0)
            nxt = d_m_at(t, q, table) if mode == DR else q.q_m_shift[:, t - 1]
        return q, table, nxt

    # -- paths ---------------------------------------------------------
    def paths(self) -> list[MediatorPath]:
        paths = enumerate_mediator_paths(self.dataset, self.config.paths, self.config.path_cap)
        if not paths:
            raise NumericalError("zero usable mediator paths")
        return paths

    def path_coverage(self, paths: Iterable[MediatorPath]) -> float:
        d = self.design
        done = d.uncensored[-1] & d.usable
        if not done.any():
            return 0.0
        observed = np.column_stack(d.mediators)[done]
        wanted = {tuple(float(v) for v in p) for p in paths}
        hit = np.array([tuple(row) in wanted for row in observed])
        return float(np.average(hit, weights=d.weights[done]))

    def sides(self, policies: Sequence[PolicyFunction], kind: str, paths, mode=DR) -> dict:
        """Per-policy, per-path pseudo-outcome vectors for one side."""
        fn = self.phi_side if kind == "phi" else self.lambda_side
        self.warm(policies, paths)
        jobs = [(p, path) for p in policies for path in paths]
        results = _parallel_map(lambda job: fn(job[0], job[1], mode), jobs, self.config.threads)
        out: dict = {}
        for (p, path), (q, _, values) in zip(jobs, results):
            out[(repr(p.to_dict()), path)] = values
            self.fallbacks += q.fallbacks
        return out

    def diagnostics(self, paths) -> dict:
        return {
            "positivity_floor_hits": int(self.floor_hits),
            "truncation_quantile": self.config.truncation_quantile,
            "truncation_scope": self.config.truncation_scope,
            "truncated_weights": int(sum(self._truncated.values())),
            "paths_used": len(paths),
            "path_coverage": self.path_coverage(paths),
            "subsample_fallbacks": int(self.fallbacks),
            "folds": self.config.folds,
            "n": self.dataset.n,
        }


def _label(path: MediatorPath) -> str:
    return path.label()


def _combine(eng: _Engine, paths, phi_vals: Mapping, lam_vals: Mapping, p_key, s_key):
    """Theta, per-path components and the centered influence for one policy pair."""
    mean = eng.dataset.mean
    phi, lam = {}, {}
    influence = np.zeros(eng.dataset.n)
    theta = 0.0
    for path in paths:
        dz = phi_vals[(p_key, path)]
        dm = lam_vals[(s_key, path)]
        ph, la = mean(dz), mean(dm)
        phi[_label(path)], lam[_label(path)] = ph, la
        theta += ph * la
        influence += (dz - ph) * la + (dm - la) * ph
    return theta, phi, lam, influence


def estimate_theta(dataset: PanelDataset, pair: PolicyPair,
                   config: EstimatorConfig | None = None) -> EstimateReport:
    """Cross-fitted one-step estimate of ``theta(d', d*)`` with a Wald interval."""
    config = config or EstimatorConfig()
    eng = _Engine(dataset, config)
    paths = eng.paths()
    phi_vals = eng.sides([pair.d_prime], "phi", paths)
    lam_vals = eng.sides([pair.d_star], "lambda", paths)
    p_key, s_key = repr(pair.d_prime.to_dict()), repr(pair.d_star.to_dict())
    theta, phi, lam, infl = _combine(eng, paths, phi_vals, lam_vals, p_key, s_key)
    se = standard_error(infl, dataset.weights)
    return EstimateReport(
        theta_hat=theta,
        se=se,
        ci=(theta - Z_CRIT * se, theta + Z_CRIT * se),
        phi=phi,
        lam=lam,
        diagnostics=eng.diagnostics(paths),
        influence=infl,
    )


def sequential_regressions(dataset: PanelDataset, pair: PolicyPair, path: MediatorPath,
                           learners=None, folds: FoldAssignment | None = None,
                           truncation_quantile: float = 1.0, mode: str = DR) -> NuisanceTable:
    """Nuisance table for one path: outcome chain under ``d'`` and path chain under ``d*``."""
    config = EstimatorConfig(
        folds=1 if folds is None else folds.k,
        truncation_quantile=truncation_quantile,
        learners=learners if learners is not None else default_ensemble(),
        seed=0 if folds is None else folds.seed,
    )
    eng = _Engine(dataset, config, folds=folds)
    path = MediatorPath(tuple(int(v) for v in path))
    q_out, _, _ = eng.phi_side(pair.d_prime, path, mode)
    q_lam, _, _ = eng.lambda_side(pair.d_star, path, mode)
    q_out.q_m_obs, q_out.q_m_shift = q_lam.q_m_obs, q_lam.q_m_shift
    return q_out


def plug_in_estimate(dataset: PanelDataset, pair: PolicyPair,
                     config: EstimatorConfig | None = None) -> Components:
    """Sequential-regression g-computation without any correction terms."""
    config = config or EstimatorConfig()
    eng = _Engine(dataset, config)
    paths = eng.paths()
    phi_vals = eng.sides([pair.d_prime], "phi", paths, mode=PLUGIN)
    lam_vals = eng.sides([pair.d_star], "lambda", paths, mode=PLUGIN)
    p_key, s_key = repr(pair.d_prime.to_dict()), repr(pair.d_star.to_dict())
    theta, phi, lam, _ = _combine(eng, paths, phi_vals, lam_vals, p_key, s_key)
    return Components(phi, lam, theta)


def ratio_tables(dataset: PanelDataset, pair: PolicyPair,
                 config: EstimatorConfig | None = None) -> dict[MediatorPath, DensityRatioTable]:
    """Truncated density-ratio tables for every path, from cross-fitted pmfs."""
    config = config or EstimatorConfig()
    eng = _Engine(dataset, config)
    return {p: eng.ratio_table(pair.d_prime, pair.d_star, p) for p in eng.paths()}


def ipw_estimate(dataset: PanelDataset, pair: PolicyPair,
                 ratios: Mapping[MediatorPath, DensityRatioTable]) -> Components:
    """Weighting estimator: ``phi = E[C'_{1,tau} H_{1,tau} Y]``, ``lam = E[C*_{1,tau} 1{M = m}]``."""
    tau = dataset.tau
    y = np.where(dataset.uncensored(tau), dataset.outcome(), 0.0)
    mediators = dataset.mediators()
    phi, lam = {}, {}
    theta = 0.0
    for path, r in ratios.items():
        on = np.all(mediators == np.asarray(path.values, dtype=float), axis=1)
        ph = dataset.mean(_term(y, r.C_prime(1, tau) * r.H(1, tau)))
        la = dataset.mean(_term(on.astype(float), r.C_star(1, tau)))
        phi[_label(path)], lam[_label(path)] = ph, la
        theta += ph * la
    return Components(phi, lam, theta)


def decompose_effects(dataset: PanelDataset, d_prime: PolicyFunction, d_star: PolicyFunction,
                      config: EstimatorConfig | None = None) -> EffectDecomposition:
    """Interventional direct, indirect and total effects from one nuisance pass.

    ``DE = theta(d', d*) - theta(d*, d*)``, ``IE = theta(d', d') - theta(d', d*)``.
    """
    config = config or EstimatorConfig()
    eng = _Engine(dataset, config)
    paths = eng.paths()
    policies = [d_prime] if d_prime == d_star else [d_prime, d_star]
    phi_vals = eng.sides(policies, "phi", paths)
    lam_vals = eng.sides(policies, "lambda", paths)
    kp, ks = repr(d_prime.to_dict()), repr(d_star.to_dict())
    t_pp, _, _, s_pp = _combine(eng, paths, phi_vals, lam_vals, kp, kp)
    t_ps, _, _, s_ps = _combine(eng, paths, phi_vals, lam_vals, kp, ks)
    t_ss, _, _, s_ss = _combine(eng, paths, phi_vals, lam_vals, ks, ks)
    w = dataset.weights
    s_de, s_ie, s_te = s_ps - s_ss, s_pp - s_ps, s_pp - s_ss
    direct = Effect(t_ps - t_ss, standard_error(s_de, w))
    indirect = Effect(t_pp - t_ps, standard_error(s_ie, w))
    return assemble_decomposition(
        direct,
        indirect,
        standard_error(s_te, w),
        components={"d_prime,d_prime": t_pp, "d_prime,d_star": t_ps, "d_star,d_star": t_ss},
        influence={"total": s_te, "direct": s_de, "indirect": s_ie},
        diagnostics=eng.diagnostics(paths),
    )


@dataclass(frozen=True)
class Slope:
    variable: str
    slope: float
    se: float


def effect_modification_slopes(eif, baseline, names: Sequence[str] | None = None,
                               estimate: float = 0.0) -> list[Slope]:
    """Univariate OLS slope of the uncentered influence value on each covariate.

    ``eif`` may be centered; ``estimate`` is added back (it only moves the
    intercept).  Standard errors are heteroskedasticity-robust (HC0).  A
    covariate with no variation gets ``nan`` for both numbers.  Results are
    sorted by absolute slope, largest first.
    """
    y = np.asarray(eif, dtype=float) + estimate
    if isinstance(baseline, pd.DataFrame):
        names = list(baseline.columns) if names is None else list(names)
        X = baseline.to_numpy(dtype=float)
    else:
        X = np.asarray(baseline, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = [f"x{j + 1}" for j in range(X.shape[1])] if names is None else list(names)
    if len(X) != len(y):
        raise DataError("one influence value per unit is required")
    out = []
    for j, name in enumerate(names):
        x = X[:, j]
        xc = x - x.mean()
        sxx = float(xc @ xc)
        if sxx <= 1e-12 * max(1.0, float(x @ x)):
            out.append(Slope(name, math.nan, math.nan))
            continue
        b = float(xc @ (y - y.mean())) / sxx
        resid = y - y.mean() - b * xc
        se = math.sqrt(float(np.sum(xc**2 * resid**2))) / sxx
        out.append(Slope(name, b, se))
    return sorted(out, key=lambda s: -abs(s.slope) if math.isfinite(s.slope) else math.inf)
