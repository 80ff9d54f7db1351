"""Canonical JSON and flat CSV renderings of result documents."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any

import numpy as np

BENCHMARK_COLUMNS = (
    "U", "V", "n", "truth", "replicates", "bias", "bias_se", "n_mse", "n_mse_se",
    "coverage", "coverage_se",
)


def _plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples to plain JSON-able values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(k, ensure_ascii=False)}: {_encode(obj[k], indent, level + 1)}"
            for k in sorted(obj)
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def to_json(document: Any, indent: int = 2) -> str:
    """Canonical JSON: sorted keys, floats at 17 significant digits, NaN as null."""
    return _encode(_plain(document), indent, 0) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (_format_float(v) if isinstance(v, float) else v)
                         for v in row])
    return buf.getvalue()


def decomposition_csv(result: dict) -> str:
    rows = [
        (label, float(result[key]["estimate"]), float(result[key]["se"]))
        for label, key in (("Total", "total"), ("Direct", "direct"), ("Indirect", "indirect"))
    ]
    return _csv(("contrast", "effect", "se"), rows)


def slopes_csv(slopes: dict) -> str:
    rows = [
        (contrast, s["variable"], s["slope"], s["se"])
        for contrast in sorted(slopes)
        for s in slopes[contrast]
    ]
    return _csv(("contrast", "variable", "slope", "se"), rows)


def benchmark_csv(table: list[dict]) -> str:
    rows = [tuple(row.get(c) for c in BENCHMARK_COLUMNS) for row in table]
    return _csv(BENCHMARK_COLUMNS, rows)


def key_value_csv(values: dict) -> str:
    return _csv(("key", "value"), sorted(values.items()))


def to_csv(document: dict) -> str:
    """Flatten the result part of a document into a plot-ready table."""
    command = document.get("command")
    result = document.get("result", {})
    if command == "decompose":
        return decomposition_csv(result)
    if command == "effectmod":
        return slopes_csv(result.get("slopes", {}))
    if command == "benchmark":
        return benchmark_csv(result.get("table", []))
    if command == "simulate" and "data" in result:
        data = result["data"]
        names = list(data)
        return _csv(names, zip(*(data[k] for k in names)))
    if command == "estimate":
        flat = {
            "theta_hat": result["theta_hat"],
            "se": result["se"],
            "ci_lo": result["ci"][0],
            "ci_hi": result["ci"][1],
        }
        for path, v in result.get("phi", {}).items():
            flat[f"phi[{path}]"] = v
        for path, v in result.get("lambda", {}).items():
            flat[f"lambda[{path}]"] = v
        return key_value_csv(flat)
    flat = {k: v for k, v in result.items() if not isinstance(v, (dict, list))}
    return key_value_csv(flat)


def emit(document: dict, fmt: str = "json") -> bytes:
    if fmt == "json":
        return to_json(document).encode()
    if fmt == "csv":
        return to_csv(_plain(document)).encode()
    raise ValueError(f"unknown format {fmt!r}")
