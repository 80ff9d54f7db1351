"""Declarative structural causal models, counterfactual rollouts and oracles.

Each node is ``value = formula(parents) (+ noise)``.  Noise is driven by one
uniform draw per (unit, node), generated from a seed sequence keyed by the
node index, so an intervened rollout can reuse the exact exogenous draws of
an observational one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, NumericalError
from .expr import Expression, compile_expression
from .panel import ROLE_OFFSET, MediatorPath, PanelDataset, from_arrays, position
from .policy import Identity, PolicyFunction, PolicyHistory, PolicyPair, Static

NOISE_KINDS = ("gaussian", "bernoulli", "categorical", "none")


@dataclass(frozen=True)
class Node:
    name: str
    kind: str  # L, A, Z, M or Y
    time: int
    formula: Expression | tuple[Expression, ...]
    noise: str = "none"
    sd: float = 1.0
    levels: tuple[int, ...] = ()

    @property
    def discrete(self) -> bool:
        return self.noise in ("bernoulli", "categorical")

    def support(self) -> tuple[int, ...]:
        if self.noise == "bernoulli":
            return (0, 1)
        if self.noise == "categorical":
            return self.levels
        raise ConfigError(f"node {self.name} is not discrete")

    def probabilities(self, env) -> np.ndarray:
        """``(n, K)`` level probabilities of a discrete node given its parents."""
        if self.noise == "bernoulli":
            p = np.asarray(self.formula(env), dtype=float)
            p = np.broadcast_to(p, (_env_len(env),))
            if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
                raise NumericalError(f"node {self.name}: probability outside [0, 1]")
            return np.column_stack([1 - p, p])
        cols = [np.broadcast_to(np.asarray(f(env), dtype=float), (_env_len(env),))
                for f in self.formula]
        P = np.column_stack(cols)
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise NumericalError(f"node {self.name}: invalid category probabilities")
        total = P.sum(axis=1, keepdims=True)
        if np.any(np.abs(total - 1) > 1e-8):
            raise NumericalError(f"node {self.name}: category probabilities do not sum to 1")
        return P

    def mean(self, env) -> np.ndarray:
        if self.discrete:
            P = self.probabilities(env)
            return P @ np.asarray(self.support(), dtype=float)
        return np.broadcast_to(np.asarray(self.formula(env), dtype=float), (_env_len(env),))

    def draw(self, env, u: np.ndarray) -> np.ndarray:
        if self.discrete:
            P = self.probabilities(env)
            idx = (u[:, None] >= np.cumsum(P, axis=1)[:, :-1]).sum(axis=1)
            out = np.asarray(self.support(), dtype=float)[idx]
        else:
            mu = np.broadcast_to(np.asarray(self.formula(env), dtype=float), u.shape)
            out = mu + self.sd * ndtri(u) if self.noise == "gaussian" else mu.astype(float)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"structural function for {self.name} returned non-finite values")
        return out

    def to_dict(self) -> dict:
        if isinstance(self.formula, tuple):
            formula = [f.text for f in self.formula]
        else:
            formula = self.formula.text
        out = {"name": self.name, "kind": self.kind, "time": self.time, "formula": formula,
               "noise": self.noise}
        if self.noise == "gaussian":
            out["sd"] = self.sd
        if self.noise == "categorical":
            out["levels"] = list(self.levels)
        return out


def _env_len(env) -> int:
    return env["__n__"]


@dataclass(frozen=True)
class ScmSpec:
    tau: int
    nodes: tuple[Node, ...]
    label: Mapping = field(default_factory=dict)

    def __post_init__(self):
        _validate(self)

    @classmethod
    def from_dict(cls, doc) -> "ScmSpec":
        if not isinstance(doc, Mapping):
            raise ConfigError("an SCM must be a mapping")
        if doc.get("builtin") is not None:
            return builtin_scm(doc)
        try:
            tau = int(doc["tau"])
            raw_nodes = list(doc["nodes"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("an SCM needs 'tau' and a list of 'nodes'") from None
        nodes = []
        for raw in raw_nodes:
            if not isinstance(raw, Mapping) or not {"name", "kind", "formula"} <= set(raw):
                raise ConfigError(f"each SCM node needs name, kind and formula: {raw!r}")
            kind = str(raw["kind"])
            time = tau + 1 if kind == "Y" else int(raw.get("time", 1))
            noise = raw.get("noise", "none")
            sd = 1.0
            if isinstance(noise, Mapping):
                sd = float(noise.get("sd", 1.0))
                noise = noise.get("type", "none")
            sd = float(raw.get("sd", sd))
            if noise not in NOISE_KINDS:
                raise ConfigError(f"unknown noise {noise!r} for node {raw['name']}")
            if noise == "categorical":
                formula = tuple(compile_expression(f) for f in raw["formula"])
                levels = tuple(int(v) for v in raw.get("levels", range(len(formula))))
                if len(levels) != len(formula):
                    raise ConfigError(f"node {raw['name']}: one probability per level is needed")
            else:
                formula = compile_expression(raw["formula"])
                levels = ()
            nodes.append(Node(str(raw["name"]), kind, time, formula, noise, sd, levels))
        return cls(tau, tuple(nodes))

    def to_dict(self) -> dict:
        if self.label.get("builtin"):
            return dict(self.label)
        return {"tau": self.tau, "nodes": [n.to_dict() for n in self.nodes]}

    def of_kind(self, kind: str, t: int | None = None) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind and (t is None or n.time == t)]

    def schema_dict(self) -> dict:
        tau = self.tau
        return {
            "tau": tau,
            "nodes": {
                "L": [[n.name for n in self.of_kind("L", t)] for t in range(1, tau + 1)],
                "A": [self.of_kind("A", t)[0].name for t in range(1, tau + 1)],
                "Z": [[n.name for n in self.of_kind("Z", t)] for t in range(1, tau + 1)],
                "M": [self.of_kind("M", t)[0].name for t in range(1, tau + 1)],
                "Y": self.of_kind("Y")[0].name,
            },
            "mediator_support": [list(self.of_kind("M", t)[0].support()) for t in range(1, tau + 1)],
            "treatment_support": sorted(
                {v for t in range(1, tau + 1) for v in self.of_kind("A", t)[0].support()}
            ),
        }


def _validate(scm: ScmSpec) -> None:
    if scm.tau < 1:
        raise ConfigError("SCM tau must be >= 1")
    seen: set[str] = set()
    last = -math.inf
    for node in scm.nodes:
        if node.kind not in ("L", "A", "Z", "M", "Y"):
            raise ConfigError(f"node {node.name}: unknown kind {node.kind!r}")
        if node.kind != "Y" and not 1 <= node.time <= scm.tau:
            raise ConfigError(f"node {node.name}: time {node.time} outside 1..{scm.tau}")
        pos = position(node.kind, node.time, scm.tau)
        if pos < last:
            raise ConfigError(f"node {node.name} breaks the L < A < Z < M time ordering")
        last = pos
        formulas = node.formula if isinstance(node.formula, tuple) else (node.formula,)
        for f in formulas:
            unknown = set(f.names) - seen
            if unknown:
                raise ConfigError(
                    f"node {node.name} reads {sorted(unknown)}, which are not earlier nodes"
                )
        if node.name in seen:
            raise ConfigError(f"duplicate node name {node.name}")
        if node.kind in ("A", "M") and not node.discrete:
            raise ConfigError(f"{node.kind} node {node.name} must be bernoulli or categorical")
        seen.add(node.name)
    if len(scm.of_kind("Y")) != 1:
        raise ConfigError("an SCM needs exactly one Y node")
    for t in range(1, scm.tau + 1):
        for kind in ("A", "M"):
            if len(scm.of_kind(kind, t)) != 1:
                raise ConfigError(f"an SCM needs exactly one {kind} node at t={t}")


def two_period_design(U: int, V: int) -> ScmSpec:
    """Two-period simulation design with binary treatment and mediator.

    ``U`` scales the effect of ``A2`` on ``Y`` and ``V`` that of ``M2``.
    """
    if U not in (-1, 1) or V not in (-1, 1):
        raise ConfigError("U and V must each be -1 or 1")

    def pr(x: str) -> str:
        return f"1/3 + expit({x})/3"

    doc = {
        "tau": 2,
        "nodes": [
            {"name": "L1", "kind": "L", "time": 1, "formula": "0", "noise": "gaussian"},
            {"name": "A1", "kind": "A", "time": 1, "formula": pr("0.5*L1"), "noise": "bernoulli"},
            {"name": "Z1", "kind": "Z", "time": 1, "formula": "0.5*(-L1 + A1 - 0.5)",
             "noise": "gaussian"},
            {"name": "M1", "kind": "M", "time": 1, "formula": pr("0.5*(L1 - A1 - Z1 + 0.5)"),
             "noise": "bernoulli"},
            {"name": "L2", "kind": "L", "time": 2, "formula": "0.5*(-L1 + A1 + Z1 - M1)",
             "noise": "gaussian"},
            {"name": "A2", "kind": "A", "time": 2, "formula": pr("0.5*(L1 - A1 - Z1 + M1 + L2)"),
             "noise": "bernoulli"},
            {"name": "Z2", "kind": "Z", "time": 2,
             "formula": "0.5*(-L1 + A1 + Z1 - M1 - L2 + A2 - 0.5)", "noise": "gaussian"},
            {"name": "M2", "kind": "M", "time": 2,
             "formula": pr("0.5*(L1 - A1 - Z1 + M1 + L2 - A2 - Z2 + 0.5)"),
             "noise": "bernoulli"},
            {"name": "Y", "kind": "Y",
             "formula": f"0.5*(-L1 - A1 - Z1 - M1 + L2 + ({U})*A2 - Z2 + ({V})*M2)",
             "noise": "gaussian"},
        ],
    }
    base = ScmSpec.from_dict(doc)
    return ScmSpec(base.tau, base.nodes, {"builtin": "paper_s8", "U": U, "V": V})


def closed_form_theta(U: int, V: int) -> float:
    """Closed-form value quoted for :func:`two_period_design` under :func:`two_period_policies`."""
    return (U - 1.25 + V / 2) / 2


def two_period_policies() -> PolicyPair:
    """``d'`` sets the first treatment to 1 and leaves the second natural; ``d*`` is the identity."""
    return PolicyPair(Static({1: 1}), Identity())


def builtin_scm(doc: Mapping) -> ScmSpec:
    name = doc.get("builtin")
    if name != "paper_s8":
        raise ConfigError(f"unknown builtin SCM {name!r}")
    try:
        return two_period_design(int(doc.get("U", 1)), int(doc.get("V", 1)))
    except (TypeError, ValueError):
        raise ConfigError("U and V must be integers") from None


# ---------------------------------------------------------------------------
# simulation


def draw_noise(scm: ScmSpec, n: int, seed: int) -> dict[str, np.ndarray]:
    """One uniform per (unit, node); the stream of each node depends only on ``(seed, index)``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    out = {}
    for i, node in enumerate(scm.nodes):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        out[node.name] = rng.random(n)
    return out


def rollout_counterfactual(scm: ScmSpec, policy: PolicyFunction, noise: Mapping[str, np.ndarray],
                           mediators: Mapping[int, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Propagate the SCM under ``policy`` from shared exogenous draws.

    At each treatment node the natural value is computed from the intervened
    history and then passed through ``d_t``.  ``mediators`` optionally
    overrides mediator nodes by time (their structural functions are skipped).
    """
    n = len(next(iter(noise.values())))
    env: dict = {"__n__": n}
    treatments: list[np.ndarray] = []
    for node in scm.nodes:
        if node.kind == "M" and mediators is not None and node.time in mediators:
            env[node.name] = np.asarray(mediators[node.time], dtype=float)
            continue
        value = node.draw(env, noise[node.name])
        if node.kind == "A":
            visible = {k: v for k, v in env.items() if k != "__n__"}
            value = np.asarray(
                policy(node.time, value, PolicyHistory(visible, tuple(treatments))), dtype=float
            )
            if not np.all(np.isin(value, node.support())):
                raise ConfigError(f"policy moved {node.name} outside its support")
            treatments.append(value)
        env[node.name] = value
    del env["__n__"]
    return env


def simulate(scm: ScmSpec, n: int, seed: int) -> PanelDataset:
    """``n`` i.i.d. observational trajectories, deterministic given ``seed``."""
    traj = rollout_counterfactual(scm, Identity(), draw_noise(scm, n, seed))
    return from_arrays(traj, scm.schema_dict())


# ---------------------------------------------------------------------------
# Monte Carlo oracle


@dataclass(frozen=True)
class OracleConfig:
    replications: int = 1_000_000
    seed: int = 0
    conditioning: str = "marginal"

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("oracle replications must be >= 1")
        if self.conditioning != "marginal":
            raise ConfigError("only marginal mediator draws are supported")


@dataclass(frozen=True)
class OracleResult:
    theta: float
    se: float
    replications: int
    path_probabilities: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "se": self.se,
            "replications": self.replications,
            "path_probabilities": dict(sorted(self.path_probabilities.items())),
        }


def _mediator_matrix(scm: ScmSpec, traj) -> np.ndarray:
    return np.column_stack([traj[scm.of_kind("M", t)[0].name] for t in range(1, scm.tau + 1)])


def oracle_theta(scm: ScmSpec, pair: PolicyPair, cfg: OracleConfig | None = None) -> OracleResult:
    """Two-phase Monte Carlo value of ``E[Y(A^{d'}, J(A^{d*}))]``.

    Phase 1 records mediator paths under ``d*``; phase 2 runs ``d'`` on fresh
    noise with each unit's mediators replaced by a path resampled from
    phase 1.  The standard error accounts for both phases.
    """
    cfg = cfg or OracleConfig()
    R = cfg.replications
    ss = np.random.SeedSequence([int(cfg.seed), 0x5EED])
    s1, s2, s3 = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
    phase1 = rollout_counterfactual(scm, pair.d_star, draw_noise(scm, R, s1))
    paths = _mediator_matrix(scm, phase1)
    pick = np.random.default_rng(s3).integers(0, R, size=R)
    J = paths[pick]
    overrides = {t: J[:, t - 1] for t in range(1, scm.tau + 1)}
    phase2 = rollout_counterfactual(scm, pair.d_prime, draw_noise(scm, R, s2), overrides)
    y = phase2[scm.of_kind("Y")[0].name]
    theta = float(y.mean())
    var = float(y.var(ddof=1)) if R > 1 else 0.0
    # between-path part: variability of the phase-1 empirical path distribution
    keys, inv = np.unique(J, axis=0, return_inverse=True)
    inv = inv.ravel()
    means = np.bincount(inv, weights=y, minlength=len(keys)) / np.bincount(inv, minlength=len(keys))
    path_keys, path_inv = np.unique(paths, axis=0, return_inverse=True)
    lookup = {tuple(k): m for k, m in zip(keys, means)}
    per_path = np.array([lookup.get(tuple(k), theta) for k in path_keys])
    between = float(np.var(per_path[path_inv.ravel()], ddof=1)) if R > 1 else 0.0
    probs = np.bincount(path_inv.ravel(), minlength=len(path_keys)) / R
    labels = {MediatorPath(tuple(int(v) for v in k)).label(): float(p)
              for k, p in zip(path_keys, probs)}
    return OracleResult(theta, math.sqrt((var + between) / R), R, labels)


# ---------------------------------------------------------------------------
# exact enumeration for discrete SCMs


def _enumerate(scm: ScmSpec, policy: PolicyFunction | None = None,
               mediators: Sequence[int] | None = None):
    """All configurations of the discrete nodes with their probabilities.

    Continuous nodes must be noise-free, except ``Y``, which is replaced by
    its conditional mean.  With a ``policy`` the treatment levels are pushed
    through it (natural values from the intervened history).
    """
    env: dict = {"__n__": 1}
    prob = np.ones(1)
    treatments: list[np.ndarray] = []
    for node in scm.nodes:
        n = len(prob)
        if node.kind == "Y":
            env[node.name] = node.mean(env)
            continue
        if node.kind == "M" and mediators is not None:
            env[node.name] = np.full(n, float(mediators[node.time - 1]))
            continue
        if not node.discrete:
            if node.noise != "none":
                raise ConfigError(f"node {node.name} is continuous; exact enumeration needs discrete nodes")
            env[node.name] = node.mean(env)
            continue
        P = node.probabilities(env)
        levels = np.asarray(node.support(), dtype=float)
        k = len(levels)
        env = {key: (np.repeat(v, k) if key != "__n__" else n * k) for key, v in env.items()}
        treatments = [np.repeat(a, k) for a in treatments]
        prob = (prob[:, None] * P).ravel()
        value = np.tile(levels, n)
        if node.kind == "A" and policy is not None:
            visible = {key: v for key, v in env.items() if key != "__n__"}
            value = np.asarray(policy(node.time, value, PolicyHistory(visible, tuple(treatments))),
                               dtype=float)
        if node.kind == "A":
            treatments.append(value)
        env[node.name] = value
    del env["__n__"]
    return env, prob


def enumerate_dataset(scm: ScmSpec) -> PanelDataset:
    """The whole observational law of a discrete SCM as a weighted dataset."""
    env, prob = _enumerate(scm)
    keep = prob > 0
    cols = {k: np.asarray(v, dtype=float)[keep] for k, v in env.items()}
    return from_arrays(cols, scm.schema_dict(), weights=prob[keep])


def brute_force_theta(scm: ScmSpec, pair: PolicyPair) -> tuple[float, dict[str, float], dict[str, float]]:
    """Exact ``theta`` and its per-path ``phi``/``lam`` by enumerating the intervened SCM."""
    supports = [scm.of_kind("M", t)[0].support() for t in range(1, scm.tau + 1)]
    grids = np.array(np.meshgrid(*supports, indexing="ij")).reshape(scm.tau, -1).T
    env_star, p_star = _enumerate(scm, pair.d_star)
    realized = _mediator_matrix(scm, env_star)
    y_name = scm.of_kind("Y")[0].name
    phi, lam = {}, {}
    theta = 0.0
    for row in grids:
        label = MediatorPath(tuple(int(v) for v in row)).label()
        env_p, p_p = _enumerate(scm, pair.d_prime, mediators=row)
        phi[label] = float(np.sum(p_p * env_p[y_name]))
        lam[label] = float(np.sum(p_star[np.all(realized == row, axis=1)]))
        theta += phi[label] * lam[label]
    return theta, phi, lam


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkResult:
    summary: dict
    replicates: list[dict]

    def to_dict(self) -> dict:
        return {"summary": self.summary, "replicates": self.replicates}


def replicate_seed(master: int, r: int) -> int:
    return int(np.random.SeedSequence([int(master), int(r)]).generate_state(1)[0])


def summarize(estimates: Sequence[float], ses: Sequence[float], truth: float, n: int) -> dict:
    """n*MSE, coverage and bias with Monte Carlo standard errors."""
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    R = len(est)
    if R == 0:
        return {"n": n, "truth": truth, "replicates": 0, "bias": None, "bias_se": None,
                "n_mse": None, "n_mse_se": None, "coverage": None, "coverage_se": None}
    err = est - truth
    sq = n * err**2
    mc = (lambda x: float(np.std(x, ddof=1) / math.sqrt(R))) if R > 1 else (lambda x: None)
    out = {
        "n": n,
        "truth": truth,
        "replicates": R,
        "bias": float(err.mean()),
        "bias_se": mc(err),
        "n_mse": float(sq.mean()),
        "n_mse_se": mc(sq),
    }
    if np.all(np.isfinite(se)) and np.all(se > 0):
        covered = np.abs(err) <= 1.959964 * se
        c = float(covered.mean())
        out["coverage"] = c
        out["coverage_se"] = math.sqrt(c * (1 - c) / R)
    else:
        out["coverage"] = None
        out["coverage_se"] = None
    return out


def benchmark(scm: ScmSpec, pair: PolicyPair, n: int, replicates: int, config=None,
              truth: float | None = None, seed: int = 0, threads: int = 1,
              estimator=None) -> BenchmarkResult:
    """Repeated simulate-and-estimate runs summarized against a known truth.

    ``estimator(dataset, pair, config) -> (estimate, se)`` defaults to the
    one-step estimator.  Replicate ``r`` uses the seed derived from
    ``(seed, r)``, so a longer run extends a shorter one.
    """
    from dataclasses import replace

    from .engine import EstimatorConfig, _parallel_map, estimate_theta

    if replicates < 0:
        raise ConfigError("replicates must be >= 0")
    if truth is None:
        raise ConfigError("benchmark needs the true parameter value")
    config = config or EstimatorConfig()

    def default(ds, pr, cfg):
        rep = estimate_theta(ds, pr, cfg)
        return rep.theta_hat, rep.se

    run = estimator or default

    def one(r: int) -> dict:
        s = replicate_seed(seed, r)
        data = simulate(scm, n, s)
        est, se = run(data, pair, replace(config, seed=s % (2**31), threads=1))
        return {"replicate": r, "seed": s, "estimate": float(est), "se": float(se)}

    rows = _parallel_map(one, list(range(replicates)), threads)
    summary = summarize([r["estimate"] for r in rows], [r["se"] for r in rows], truth, n)
    if scm.label:
        summary = {**{k: v for k, v in scm.label.items() if k != "builtin"}, **summary}
    return BenchmarkResult(summary, rows)
