from __future__ import annotations

import json

import numpy as np

from medseq.report import BENCHMARK_COLUMNS, emit, to_csv, to_json


def test_canonical_json_roundtrip():
    doc = {"b": [1, 2.5, 1e-20, 0.1], "a": {"z": None, "y": float("nan"), "x": np.float64(1 / 3)},
           "c": "text", "d": True}
    once = emit(doc, "json")
    again = emit(json.loads(once), "json")
    assert once == again
    assert list(json.loads(once)) == ["a", "b", "c", "d"]
    assert b"0.33333333333333331" in once
    assert json.loads(once)["a"]["y"] is None


def test_floats_keep_full_precision():
    x = 0.1 + 0.2
    assert float(json.loads(to_json({"x": x}))["x"]) == x
    assert "NaN" not in to_json({"x": float("nan")})


def test_empty_benchmark_is_header_only():
    text = to_csv({"command": "benchmark", "result": {"table": []}})
    assert text == ",".join(BENCHMARK_COLUMNS) + "\n"


def test_decomposition_table_shape():
    result = {k: {"estimate": v, "se": 0.01, "ci": [0, 0]}
              for k, v in (("total", 0.059), ("direct", -0.024), ("indirect", 0.083))}
    rows = to_csv({"command": "decompose", "result": result}).splitlines()
    assert rows[0] == "contrast,effect,se"
    assert rows[1].startswith("Total,0.058999999999999997")


def test_slope_table():
    slopes = {"total": [{"variable": "age", "slope": 0.5, "se": 0.1}]}
    rows = to_csv({"command": "effectmod", "result": {"slopes": slopes}}).splitlines()
    assert rows == ["contrast,variable,slope,se", "total,age,0.5,0.10000000000000001"]
