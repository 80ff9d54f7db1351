"""A small vectorized expression language for structural formulas and policy rules.

Only arithmetic, comparisons, boolean connectives, numeric literals, named
variables and a fixed set of functions are accepted; everything else is
rejected when the expression is compiled.
"""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigError

FUNCTIONS = {
    "expit": expit,
    "logit": logit,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
    "where": np.where,
}

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: np.mod,
    ast.BitAnd: np.logical_and,
    ast.BitOr: np.logical_or,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos, ast.Not: np.logical_not}
_COMPARE = {
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
    ast.Eq: np.equal,
    ast.NotEq: np.not_equal,
}


def _check(node: ast.AST, text: str) -> set[str]:
    """Validate the tree and return the free variable names."""
    names: set[str] = set()
    for sub in ast.walk(node):
        if isinstance(sub, ast.Call):
            if not isinstance(sub.func, ast.Name) or sub.func.id not in FUNCTIONS:
                raise ConfigError(f"unsupported function in {text!r}")
            if sub.keywords:
                raise ConfigError(f"keyword arguments are not allowed in {text!r}")
        elif isinstance(sub, ast.Name):
            if sub.id not in FUNCTIONS:
                names.add(sub.id)
        elif isinstance(sub, ast.Constant):
            if isinstance(sub.value, bool) or not isinstance(sub.value, (int, float)):
                raise ConfigError(f"only numeric literals are allowed in {text!r}")
        elif isinstance(sub, ast.BinOp):
            if type(sub.op) not in _BINOPS:
                raise ConfigError(f"unsupported operator in {text!r}")
        elif isinstance(sub, ast.UnaryOp):
            if type(sub.op) not in _UNARY:
                raise ConfigError(f"unsupported operator in {text!r}")
        elif isinstance(sub, ast.Compare):
            if any(type(op) not in _COMPARE for op in sub.ops):
                raise ConfigError(f"unsupported comparison in {text!r}")
        elif not isinstance(
            sub,
            (ast.Expression, ast.BoolOp, ast.And, ast.Or, ast.Load, ast.operator,
             ast.unaryop, ast.cmpop),
        ):
            raise ConfigError(f"unsupported syntax {type(sub).__name__} in {text!r}")
    return names


@dataclass(frozen=True)
class Expression:
    text: str
    tree: ast.Expression
    names: frozenset[str]

    def __call__(self, env: Mapping[str, object]):
        return _eval(self.tree.body, env)


def compile_expression(text) -> Expression:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str) or not text.strip():
        raise ConfigError(f"expression must be a non-empty string, got {text!r}")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
    names = _check(tree, text)
    return Expression(text.strip(), tree, frozenset(names))


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        try:
            return env[node.id]
        except KeyError:
            raise ConfigError(f"unknown variable {node.id!r}") from None
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_eval(node.operand, env))
    if isinstance(node, ast.BoolOp):
        combine = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
        out = _eval(node.values[0], env)
        for v in node.values[1:]:
            out = combine(out, _eval(v, env))
        return out
    if isinstance(node, ast.Compare):
        left = _eval(node.left, env)
        out = True
        for op, right_node in zip(node.ops, node.comparators):
            right = _eval(right_node, env)
            out = np.logical_and(out, _COMPARE[type(op)](left, right))
            left = right
        return out
    if isinstance(node, ast.Call):
        args = [_eval(a, env) for a in node.args]
        return FUNCTIONS[node.func.id](*args)
    raise ConfigError(f"unsupported syntax {type(node).__name__}")  # pragma: no cover
