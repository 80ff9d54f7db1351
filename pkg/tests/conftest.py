from __future__ import annotations

import numpy as np
import pytest

from medseq.learners import CellMeans, EnsembleSpec, RidgeLinear, LogisticRidge
from medseq.scm import ScmSpec


def binary_scm(seed: int = 0) -> ScmSpec:
    """Two-period SCM where every node is binary, so it can be enumerated exactly."""
    rng = np.random.default_rng(seed)
    c = np.round(rng.uniform(-1, 1, size=40), 3)

    def pr(expr: str) -> str:
        return f"0.15 + 0.7*expit({expr})"

    doc = {
        "tau": 2,
        "nodes": [
            {"name": "L1", "kind": "L", "time": 1, "formula": "0.55", "noise": "bernoulli"},
            {"name": "A1", "kind": "A", "time": 1, "formula": pr(f"{c[0]} + {c[1]}*L1"),
             "noise": "bernoulli"},
            {"name": "Z1", "kind": "Z", "time": 1,
             "formula": pr(f"{c[2]} + {c[3]}*L1 + {c[4]}*A1"), "noise": "bernoulli"},
            {"name": "M1", "kind": "M", "time": 1,
             "formula": pr(f"{c[5]} + {c[6]}*L1 + {c[7]}*A1 + {c[8]}*Z1"), "noise": "bernoulli"},
            {"name": "L2", "kind": "L", "time": 2,
             "formula": pr(f"{c[9]} + {c[10]}*A1 + {c[11]}*Z1 + {c[12]}*M1"),
             "noise": "bernoulli"},
            {"name": "A2", "kind": "A", "time": 2,
             "formula": pr(f"{c[13]} + {c[14]}*L1 + {c[15]}*A1 + {c[16]}*M1 + {c[17]}*L2"),
             "noise": "bernoulli"},
            {"name": "Z2", "kind": "Z", "time": 2,
             "formula": pr(f"{c[18]} + {c[19]}*A1 + {c[20]}*Z1 + {c[21]}*L2 + {c[22]}*A2"),
             "noise": "bernoulli"},
            {"name": "M2", "kind": "M", "time": 2,
             "formula": pr(f"{c[23]} + {c[24]}*M1 + {c[25]}*A2 + {c[26]}*Z2 + {c[27]}*L1"),
             "noise": "bernoulli"},
            {"name": "Y", "kind": "Y",
             "formula": f"{c[28]} + {c[29]}*L1 + {c[30]}*A1 + {c[31]}*Z1 + {c[32]}*M1"
                        f" + {c[33]}*L2 + {c[34]}*A2 + {c[35]}*Z2 + {c[36]}*M2 + {c[37]}*A1*M2",
             "noise": "gaussian"},
        ],
    }
    return ScmSpec.from_dict(doc)


def exact_learner() -> EnsembleSpec:
    return EnsembleSpec((CellMeans(),), cv_folds=2)


def fast_learners(seed: int = 0) -> EnsembleSpec:
    return EnsembleSpec((RidgeLinear(), LogisticRidge()), cv_folds=3, seed=seed)


@pytest.fixture
def scm2():
    return binary_scm()


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
