from __future__ import annotations

import numpy as np
import pytest

from medseq.errors import ConfigError, DataError
from medseq.learners import FittedModel, LogisticRidge, RidgeLinear
from medseq.panel import MediatorPath, assign_folds, from_arrays
from medseq.policy import (
    DelayFirstLevel,
    DensityRatioTable,
    Identity,
    PolicyHistory,
    PolicyPair,
    Static,
    TreatmentModels,
    apply_policy,
    crossfit_pmf,
    density_ratios,
    estimate_treatment_pmf,
    policy_from_config,
    shifted_pmf,
    truncate_weights,
)

SCHEMA3 = {
    "tau": 4,
    "nodes": {"L": [["L1"], [], [], []], "A": ["A1", "A2", "A3", "A4"], "Z": [[], [], [], []],
              "M": ["M1", "M2", "M3", "M4"], "Y": "Y"},
    "mediator_support": [[0, 1]] * 4,
    "treatment_support": [0, 1, 2],
}


def _panel(treatments, mediators=None):
    n = len(treatments)
    a = np.asarray(treatments, dtype=float)
    m = np.zeros((n, 4)) if mediators is None else np.asarray(mediators, dtype=float)
    cols = {"L1": np.arange(n, dtype=float)}
    for t in range(4):
        cols[f"A{t + 1}"] = a[:, t]
        cols[f"M{t + 1}"] = m[:, t]
    cols["Y"] = np.zeros(n)
    return from_arrays(cols, SCHEMA3)


def test_identity_returns_observed():
    ds = _panel([[0, 1, 2, 2], [1, 1, 0, 2]])
    for t in range(1, 5):
        np.testing.assert_array_equal(apply_policy(Identity(), ds, t), ds.treatment(t))


def test_delay_first_level_on_observed_history():
    ds = _panel([[0, 1, 2, 2], [0, 0, 1, 1]])
    d = DelayFirstLevel()
    assert apply_policy(d, ds, 3)[0] == 1
    assert apply_policy(d, ds, 4)[0] == 2
    for t in range(1, 5):
        assert apply_policy(d, ds, t)[1] == ds.treatment(t)[1]


def test_policy_outside_support_is_rejected():
    ds = _panel([[0, 1, 2, 2]])
    with pytest.raises(ConfigError, match="outside the support"):
        apply_policy(Static({1: 5}), ds, 1)


def test_policy_from_config():
    assert policy_from_config({"builtin": "identity"}) == Identity()
    assert policy_from_config("delay_first_level") == DelayFirstLevel(2, 1)
    assert policy_from_config({"builtin": "static", "values": {1: 1}}) == Static({1: 1})
    rules = policy_from_config({"rules": [{"set": 1, "level": 2, "when": "L1 > 0", "times": [2]}]})
    hist = PolicyHistory({"L1": np.array([-1.0, 1.0, 1.0])})
    np.testing.assert_array_equal(rules(2, np.array([2.0, 2.0, 0.0]), hist), [2.0, 1.0, 0.0])
    np.testing.assert_array_equal(rules(1, np.array([2.0, 2.0, 0.0]), hist), [2.0, 2.0, 0.0])
    assert policy_from_config(rules.to_dict()) == rules
    with pytest.raises(ConfigError):
        policy_from_config({"builtin": "nope"})
    with pytest.raises(ConfigError):
        policy_from_config({"rules": [{"set": 1, "when": "__import__('os')"}]})


def test_marginal_pmf_recovered():
    rng = np.random.default_rng(0)
    n = 2000
    a = rng.choice([0, 1, 2], p=[0.5, 0.3, 0.2], size=n).astype(float)
    cols = {"L1": rng.normal(size=n), "A1": a, "M1": np.zeros(n), "Y": np.zeros(n)}
    schema = {"tau": 1, "nodes": {"L": [["L1"]], "A": ["A1"], "M": ["M1"], "Y": "Y"},
              "mediator_support": [[0, 1]]}
    ds = from_arrays(cols, schema)
    pmf = estimate_treatment_pmf(ds, 1, LogisticRidge(), assign_folds(ds, 3, seed=1))
    np.testing.assert_allclose(pmf.mean(axis=0), [0.5, 0.3, 0.2], atol=0.05)
    np.testing.assert_allclose(pmf.sum(axis=1), 1.0)


def test_deterministic_treatment_is_learned():
    rng = np.random.default_rng(1)
    n = 1000
    L = rng.normal(size=n)
    a = (L > 0).astype(float)
    cols = {"L1": L, "A1": a, "M1": np.zeros(n), "Y": np.zeros(n)}
    schema = {"tau": 1, "nodes": {"L": [["L1"]], "A": ["A1"], "M": ["M1"], "Y": "Y"},
              "mediator_support": [[0, 1]]}
    ds = from_arrays(cols, schema)
    pmf = estimate_treatment_pmf(ds, 1, LogisticRidge(penalty=1e-6), assign_folds(ds, 3, 0))
    realized = pmf[np.arange(n), a.astype(int)]
    far = np.abs(L) > 0.05
    assert realized[far].min() >= 0.99


class _Flat:
    def fit(self, X, y, weights=None, kind="mean"):
        return FittedModel(lambda Z: np.full(len(Z), 0.2), kind)


def test_one_vs_rest_is_renormalized():
    y = np.array([0.0, 1.0, 2.0] * 4)
    pmf = crossfit_pmf(_Flat(), np.zeros((12, 1)), y, (0, 1, 2), np.ones(12, bool), None)
    np.testing.assert_allclose(pmf, 1 / 3)


def test_absent_treatment_level_is_an_error():
    ds = _panel([[0, 0, 0, 0], [1, 1, 1, 1]] * 5)
    with pytest.raises(DataError, match="never occurs"):
        estimate_treatment_pmf(ds, 1, LogisticRidge(), None)


def test_pushforward():
    pmf = np.array([[0.5, 0.3, 0.2]])
    hist = PolicyHistory({}, ())
    np.testing.assert_allclose(shifted_pmf(Identity(), pmf, hist, 1, (0, 1, 2)), pmf)
    np.testing.assert_allclose(
        shifted_pmf(DelayFirstLevel(), pmf, hist, 1, (0, 1, 2)), [[0.5, 0.5, 0.0]]
    )
    np.testing.assert_allclose(
        shifted_pmf(Static({1: 1}), pmf, hist, 1, (0, 1, 2)), [[0.0, 1.0, 0.0]]
    )


def _exact_models(ds, g):
    n, tau = ds.n, ds.tau
    return TreatmentModels(
        treatment=[np.tile(g, (n, 1)) for _ in range(tau)],
        mediator=[np.full((n, 2), 0.5) for _ in range(tau)],
        uncensored=[np.ones(n) for _ in range(tau)],
    )


def test_identity_ratios_are_one():
    ds = _panel([[0, 1, 2, 2], [1, 0, 0, 1]])
    r = density_ratios(PolicyPair(Identity(), Identity()), ds, _exact_models(ds, [0.5, 0.3, 0.2]),
                       MediatorPath((0, 0, 0, 0)))
    np.testing.assert_allclose(r.prime, 1.0)
    np.testing.assert_allclose(r.C_star(1, 4), 1.0)
    np.testing.assert_allclose(r.C_prime(3, 2), 1.0)  # empty product


def test_ratio_zero_where_policy_cannot_reach_observed_level():
    ds = _panel([[0, 1, 2, 2]])
    r = density_ratios(PolicyPair(DelayFirstLevel(), Identity()), ds,
                       _exact_models(ds, [0.5, 0.3, 0.2]), MediatorPath((0, 0, 0, 0)))
    assert r.prime[0, 2] == 0.0
    np.testing.assert_allclose(r.prime[0, 1], 0.5 / 0.3)  # level 1 absorbs the mass of 2


def test_off_path_unit_has_zero_mediator_product():
    ds = _panel([[0, 0, 0, 0], [0, 0, 0, 0]], mediators=[[0, 0, 0, 0], [0, 1, 0, 0]])
    r = density_ratios(PolicyPair(Identity(), Identity()), ds, _exact_models(ds, [0.5, 0.3, 0.2]),
                       MediatorPath((0, 0, 0, 0)))
    assert r.H(1, 4)[1] == 0.0 and r.H(2, 3)[1] == 0.0
    assert r.H(1, 4)[0] == 16.0
    assert r.H(3, 4)[1] == 4.0


def _table(values):
    v = np.asarray(values, dtype=float)[:, None]
    return DensityRatioTable.build(v, np.ones_like(v), np.ones_like(v))


def test_truncation_rules():
    same = _table(np.full(10, 2.0))
    assert truncate_weights(same, 0.5).c_prime[(1, 1)].tolist() == [2.0] * 10
    w = np.array([1.0] * 99 + [1000.0])
    capped = truncate_weights(_table(w), 0.99)
    cap = np.quantile(w, 0.99)
    out = capped.C_prime(1, 1)
    assert out[-1] == pytest.approx(cap)
    np.testing.assert_array_equal(out[:-1], 1.0)
    assert capped.truncated == 1
    untouched = truncate_weights(_table(w), 1.0)
    np.testing.assert_array_equal(untouched.C_prime(1, 1), w)
    with pytest.raises(ConfigError):
        truncate_weights(_table(w), 0.0)


from hypothesis import given, settings, strategies as st  # noqa: E402


@given(st.lists(st.floats(0, 1e4), min_size=4, max_size=40), st.floats(0.01, 1.0),
       st.sampled_from(["family", "range"]))
@settings(max_examples=60, deadline=None)
def test_truncation_never_increases_weights(values, q, scope):
    v = np.asarray(values).reshape(-1, 1)
    v2 = np.column_stack([v[:, 0], v[::-1, 0]])
    table = DensityRatioTable.build(v2, v2, v2)
    capped = truncate_weights(table, q, scope)
    for key, arr in table.c_prime.items():
        assert np.all(capped.c_prime[key] <= arr)


def test_per_range_scope_differs_from_pooled():
    first = np.array([1.0, 2.0, 3.0, 100.0])
    single = np.column_stack([first, np.full(4, 0.5)])
    table = DensityRatioTable.build(single, single, single)
    pooled = truncate_weights(table, 0.5)
    ranged = truncate_weights(table, 0.5, scope="range")
    assert ranged.C_prime(2, 2).tolist() == [0.5] * 4
    assert not np.allclose(pooled.C_prime(1, 1), ranged.C_prime(1, 1))
    with pytest.raises(ConfigError):
        truncate_weights(table, 0.5, scope="time")
