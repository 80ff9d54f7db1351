from __future__ import annotations

import numpy as np
import pytest

from medseq.errors import ConfigError
from medseq.expr import compile_expression


def test_arithmetic_and_functions():
    f = compile_expression("1/3 + expit(0.5*(x - y))/3")
    x = np.array([0.0, 2.0])
    out = f({"x": x, "y": np.zeros(2)})
    np.testing.assert_allclose(out, 1 / 3 + 1 / (1 + np.exp(-0.5 * x)) / 3)
    assert set(f.names) == {"x", "y"}


def test_comparisons_and_connectives():
    f = compile_expression("(a > 0) & (b <= 1) | (not (a < 5))")
    out = f({"a": np.array([1.0, -1.0, 6.0]), "b": np.array([0.0, 0.0, 3.0])})
    np.testing.assert_array_equal(out, [True, False, True])
    chained = compile_expression("0 < a < 2")
    np.testing.assert_array_equal(chained({"a": np.array([1.0, 3.0])}), [True, False])


@pytest.mark.parametrize("text", [
    "__import__('os')", "x.real", "x[0]", "lambda: 1", "'s'", "open(x)", "max(x, key=1)", "1 +",
])
def test_rejected_syntax(text):
    with pytest.raises(ConfigError):
        compile_expression(text)


def test_unknown_variable_at_evaluation():
    with pytest.raises(ConfigError):
        compile_expression("x + z")({"x": 1.0})
