from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from medseq.errors import LearnerError, SingularDesignError
from medseq.learners import (
    PROBABILITY,
    SELECT,
    BoostedTrees,
    CellMeans,
    EnsembleSpec,
    FittedModel,
    LogisticRidge,
    RidgeLinear,
    cv_risk,
    default_ensemble,
    fit,
    learner_from_dict,
    learner_to_dict,
    simplex_least_squares,
)
from medseq.trees import boost


def test_ridge_recovers_exact_line():
    X = np.array([[0.0], [1.0], [2.0]])
    model = fit(RidgeLinear(penalty=0.0), X, np.array([1.0, 3.0, 5.0]))
    np.testing.assert_allclose(model.predict(np.array([[3.0]])), [7.0], atol=1e-10)


def test_ridge_singular_without_penalty():
    X = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(SingularDesignError):
        fit(RidgeLinear(penalty=0.0), X, np.arange(5.0))


@pytest.mark.parametrize("spec", [RidgeLinear(), BoostedTrees(), CellMeans(), LogisticRidge()])
def test_constant_target(spec):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(80, 3))
    c = 0.3
    pred = fit(spec, X, np.full(80, c)).predict(rng.normal(size=(10, 3)))
    np.testing.assert_allclose(pred, c, atol=1e-6 if isinstance(spec, LogisticRidge) else 1e-8)


def test_logistic_balanced_constant_feature():
    X = np.ones((10, 1))
    y = np.array([0, 1] * 5, dtype=float)
    p = fit(LogisticRidge(), X, y, kind=PROBABILITY).predict(X)
    np.testing.assert_allclose(p, 0.5, atol=1e-8)


def test_logistic_rejects_targets_outside_unit_interval():
    with pytest.raises(LearnerError):
        fit(LogisticRidge(), np.zeros((4, 1)), np.array([0.0, 2.0, 1.0, 0.0]))


def test_probability_predictions_are_clipped():
    X = np.array([[-5.0], [-4.0], [4.0], [5.0]] * 5)
    y = (X[:, 0] > 0).astype(float)
    p = fit(LogisticRidge(penalty=1e-8), X, y, kind=PROBABILITY).predict(np.array([[-50.0], [50.0]]))
    assert p.min() >= 1e-6 and p.max() <= 1 - 1e-6


def test_boosting_fits_a_step():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(400, 2))
    y = np.where(X[:, 0] > 0.2, 2.0, -1.0)
    model = boost(X, y, np.ones(400), rounds=100, max_depth=2, shrinkage=0.3, min_leaf=5)
    assert np.mean((model.predict(X) - y) ** 2) < 1e-3


def test_cellmeans_matches_group_means():
    X = np.array([[0, 0], [0, 0], [1, 0], [1, 1]], dtype=float)
    y = np.array([1.0, 3.0, 5.0, 7.0])
    w = np.array([1.0, 3.0, 1.0, 1.0])
    model = fit(CellMeans(), X, y, w)
    np.testing.assert_allclose(model.predict(X[[0, 2, 3]]), [2.5, 5.0, 7.0])


def test_single_member_ensemble_is_that_member():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 2))
    y = X @ [1.0, -2.0] + rng.normal(size=60)
    ens = fit(EnsembleSpec((RidgeLinear(),)), X, y)
    solo = fit(RidgeLinear(), X, y)
    assert ens.stack_weights == (1.0,)
    np.testing.assert_allclose(ens.predict(X), solo.predict(X))


@dataclass(frozen=True)
class NoiseLearner:
    seed: int = 0

    def fit(self, X, y, weights=None, kind="mean"):
        scale = float(np.std(y)) + 1.0

        def predict(Z):
            rng = np.random.default_rng([self.seed, len(Z)])
            return rng.normal(scale=scale, size=len(Z))

        return FittedModel(predict, kind)


def test_stacking_prefers_perfect_member():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    y = 1 + 2 * X[:, 0] - X[:, 1]
    model = fit(EnsembleSpec((NoiseLearner(), RidgeLinear(penalty=1e-10)), cv_folds=3), X, y)
    assert model.stack_weights[1] >= 0.99


def test_select_takes_first_of_identical_members():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 2))
    y = X[:, 0] + rng.normal(size=60)
    model = fit(EnsembleSpec((RidgeLinear(), RidgeLinear()), stacking=SELECT), X, y)
    assert model.stack_weights == (1.0, 0.0)


@given(st.lists(st.floats(-10, 10), min_size=6, max_size=30), st.integers(0, 2**16))
@settings(max_examples=40, deadline=None)
def test_simplex_weights_are_on_the_simplex(values, seed):
    rng = np.random.default_rng(seed)
    y = np.asarray(values)
    P = np.column_stack([y + rng.normal(size=len(y)), rng.normal(size=len(y)), np.zeros(len(y))])
    a = simplex_least_squares(P, y)
    assert np.all(a >= 0)
    assert abs(a.sum() - 1) < 1e-12


def test_cv_risk_interpolating_learner():
    X = np.repeat(np.arange(10.0), 10)[:, None]
    y = np.sin(X[:, 0])
    assert cv_risk(CellMeans(), X, y, folds=5) <= 1e-6


def test_cv_risk_pure_noise():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(600, 2))
    y = rng.normal(scale=2.0, size=600)
    risk = cv_risk(RidgeLinear(), X, y, folds=5, seed=1)
    assert abs(risk - 4.0) < 0.2 * 4.0


def test_cv_risk_deterministic():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(100, 3))
    y = rng.normal(size=100)
    assert cv_risk(default_ensemble(), X, y, seed=3) == cv_risk(default_ensemble(), X, y, seed=3)


def test_too_small_for_cv():
    with pytest.raises(LearnerError):
        cv_risk(RidgeLinear(), np.zeros((3, 1)), np.zeros(3), folds=5)


def test_learner_dict_roundtrip():
    for spec in default_ensemble().members + (CellMeans(),):
        assert learner_from_dict(learner_to_dict(spec)) == spec
    with pytest.raises(LearnerError):
        learner_from_dict({"family": "forest"})
    with pytest.raises(LearnerError):
        learner_from_dict({"family": "ridge", "alpha": 1})
