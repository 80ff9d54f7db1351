from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from medseq.errors import ConfigError, DataError
from medseq.panel import (
    STATUS_CODES,
    assign_folds,
    build_panel,
    enumerate_mediator_paths,
    from_arrays,
    history,
    load_panel,
    load_schema,
)

SCHEMA1 = {
    "tau": 1,
    "nodes": {"L": [["L1"]], "A": ["A1"], "Z": [["Z1"]], "M": ["M1"], "Y": "Y"},
    "mediator_support": [[0, 1]],
}

SCHEMA2 = {
    "tau": 2,
    "nodes": {
        "L": [["L1"], ["L2"]], "A": ["A1", "A2"], "Z": [["Z1"], ["Z2"]],
        "M": ["M1", "M2"], "Y": "Y",
    },
    "mediator_support": [[0, 1], [0, 1]],
}


def test_minimal_well_formed_panel():
    text = "L1,A1,Z1,M1,Y\n0.5,1,0.2,0,1.0\n-0.1,0,0.3,1,2.0\n"
    ds = load_panel(text, SCHEMA1)
    assert ds.n == 2 and ds.tau == 1
    assert set(ds.mediator(1)) <= {0, 1}
    assert ds.imputed == {}


def test_baseline_gap_is_mean_filled_with_indicator():
    frame = pd.DataFrame({
        "L1": [1.0, np.nan, 3.0], "A1": [1, 0, 1], "Z1": [0.0, 0.0, 0.0],
        "M1": [0, 1, 1], "Y": [1.0, 2.0, 3.0],
    })
    ds = build_panel(frame, SCHEMA1)
    np.testing.assert_allclose(ds.column("L1"), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(ds.column("L1_missing"), [0, 1, 0])
    assert "L1_missing" in ds.baseline_columns()
    assert ds.imputed["L1"] == 1


def test_censoring_is_absorbing_and_outcome_unobserved():
    schema = {
        "tau": 3,
        "nodes": {"L": [["L1"], [], []], "A": ["A1", "A2", "A3"], "Z": [[], [], []],
                  "M": ["M1", "M2", "M3"], "Y": "Y"},
        "mediator_support": [[0, 1]] * 3,
    }
    text = (
        "L1,A1,M1,A2,M2,A3,M3,Y,status_1,status_2,status_3\n"
        "0.1,1,0,1,,,,,active,censored,\n"
        "0.2,0,1,1,1,0,0,1.5,active,active,active\n"
    )
    ds = load_panel(text, schema)
    assert ds.status[0, 1] == STATUS_CODES["censored"]
    assert ds.status[0, 2] == STATUS_CODES["censored"]
    assert not ds.uncensored(3)[0] and ds.uncensored(3)[1]
    assert ds.has_censoring


def test_missing_outcome_for_active_unit_is_an_error():
    with pytest.raises(DataError):
        load_panel("L1,A1,Z1,M1,Y\n0.5,1,0.2,0,\n", SCHEMA1)


def test_unknown_and_absent_columns():
    with pytest.raises(DataError, match="unknown role"):
        load_panel("L1,A1,Z1,M1,Y,extra\n0,1,0,0,1,9\n", SCHEMA1)
    with pytest.raises(DataError, match="absent"):
        load_panel("L1,A1,M1,Y\n0,1,0,1\n", SCHEMA1)


def test_mediator_outside_support():
    with pytest.raises(DataError, match="outside support"):
        load_panel("L1,A1,Z1,M1,Y\n0,1,0,2,1\n", SCHEMA1)


def test_schema_validation():
    with pytest.raises(ConfigError):
        load_schema({"tau": 0, "nodes": {}})
    bad = {**SCHEMA1, "nodes": {**SCHEMA1["nodes"], "Q": ["x"]}}
    with pytest.raises(ConfigError, match="unknown column role"):
        load_schema(bad)
    dup = {**SCHEMA1, "nodes": {**SCHEMA1["nodes"], "Z": [["L1"]]}}
    with pytest.raises(ConfigError, match="more than once"):
        load_schema(dup)


def test_schema_roundtrip():
    s = load_schema(SCHEMA2)
    assert load_schema(s.to_dict()) == s


def _panel2(n=4):
    rng = np.random.default_rng(0)
    cols = {c: rng.integers(0, 2, n).astype(float) for c in
            ("L1", "A1", "Z1", "M1", "L2", "A2", "Z2", "M2")}
    cols["Y"] = rng.normal(size=n)
    return from_arrays(cols, SCHEMA2)


def test_history_anchors():
    ds = from_arrays({"L1": [1.0], "A1": [1], "Z1": [0.5], "M1": [1], "Y": [2.0]}, SCHEMA1)
    assert ds.history_names(("A", 1)) == ["L1"]
    assert ds.history_names(("M", 1)) == ["L1", "A1", "Z1"]
    view = history(ds, 0, ("M", 1))
    np.testing.assert_allclose(view.values, [1.0, 1.0, 0.5])
    ds2 = _panel2()
    assert ds2.history_names(("A", 2)) == ["L1", "A1", "Z1", "M1", "L2"]
    assert ds2.history_names(("Y", 3)) == ["L1", "A1", "Z1", "M1", "L2", "A2", "Z2", "M2"]
    with pytest.raises(DataError):
        ds2.history_names(("A", 3))


def test_full_and_observed_paths():
    ds = _panel2()
    full = enumerate_mediator_paths(ds, "full")
    assert [p.values for p in full] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    three = {**SCHEMA1, "mediator_support": [[0, 1, 2]]}
    ds3 = from_arrays({"L1": [0.0], "A1": [1], "Z1": [0], "M1": [2], "Y": [1.0]}, three)
    assert len(enumerate_mediator_paths(ds3, "full")) == 3
    cols = {c: [0.0, 1.0, 0.0] for c in ("L1", "A1", "Z1", "L2", "A2", "Z2")}
    cols.update({"M1": [0, 1, 0], "M2": [0, 1, 0], "Y": [1.0, 2.0, 3.0]})
    obs = enumerate_mediator_paths(from_arrays(cols, SCHEMA2), "observed_only")
    assert [p.values for p in obs] == [(0, 0), (1, 1)]
    with pytest.raises(DataError):
        enumerate_mediator_paths(ds, "full", cap=3)


def test_fold_balance_and_determinism():
    sizes = np.bincount(assign_folds(6, 3, seed=1).membership)[1:]
    assert sorted(sizes) == [2, 2, 2]
    sizes = np.bincount(assign_folds(7, 3, seed=1).membership)[1:]
    assert sorted(sizes) == [2, 2, 3]
    a = assign_folds(50, 5, seed=9).membership
    b = assign_folds(50, 5, seed=9).membership
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ConfigError):
        assign_folds(10, 1, seed=0)


def test_to_csv_roundtrip():
    ds = _panel2(6)
    again = load_panel(ds.to_csv(), SCHEMA2)
    pd.testing.assert_frame_equal(again.frame, ds.frame)


from hypothesis import given, settings, strategies as st  # noqa: E402


@given(st.integers(2, 200), st.integers(2, 10), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_folds_partition_units(n, k, seed):
    if k > n:
        with pytest.raises(DataError):
            assign_folds(n, k, seed)
        return
    labels = assign_folds(n, k, seed).membership
    sizes = np.bincount(labels, minlength=k + 1)[1:]
    assert sizes.sum() == n and len(sizes) == k
    assert sizes.max() - sizes.min() <= 1


def test_status_markers_survive_roundtrip():
    schema = {
        "tau": 2,
        "nodes": {"L": [["L1"], []], "A": ["A1", "A2"], "Z": [[], []], "M": ["M1", "M2"], "Y": "Y"},
        "mediator_support": [[0, 1], [0, 1]],
    }
    text = ("L1,A1,M1,A2,M2,Y,status_1,status_2\n"
            "0.1,1,0,1,,,active,censored\n"
            "0.2,0,1,1,1,1.5,active,active\n"
            "0.3,0,1,,,1.0,deceased,\n")
    ds = load_panel(text, schema)
    again = load_panel(ds.to_csv(), schema)
    np.testing.assert_array_equal(again.status, ds.status)
    pd.testing.assert_frame_equal(again.frame, ds.frame)
