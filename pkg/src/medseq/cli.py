"""Command-line front end.

One configuration document (YAML or JSON) drives every command; flags only
override keys of that document.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import io
import logging
import os
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import pandas as pd
import yaml

from . import __version__
from .engine import (
    EstimatorConfig,
    decompose_effects,
    effect_modification_slopes,
    estimate_theta,
)
from .errors import ConfigError, DataError, LearnerError, MedseqError, NumericalError
from .learners import (
    CONVEX,
    SELECT,
    EnsembleSpec,
    default_ensemble,
    learner_from_dict,
    learner_to_dict,
)
from .panel import DEFAULT_PATH_CAP, load_panel, load_schema
from .policy import PolicyPair, policy_from_config
from .report import emit
from .scm import (
    OracleConfig,
    ScmSpec,
    benchmark,
    closed_form_theta,
    oracle_theta,
    two_period_policies,
    simulate,
)

log = logging.getLogger("medseq")

COMMANDS = ("estimate", "decompose", "simulate", "oracle", "benchmark", "effectmod")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
_STACKING = {"convex": CONVEX, "convexweights": CONVEX, "select": SELECT, "discreteselect": SELECT}


def example_path(name: str) -> Path:
    """Location of a bundled example file (``panel.csv``, ``schema.yaml``, ...)."""
    return Path(str(resources.files("medseq") / "data" / f"example_{name}"))


def _load_document(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("the config document must be a mapping")
    base = Path(path).parent
    for key in ("data", "schema", "scm"):
        value = doc.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            doc[key] = str(base / value)
    return doc


def _scm_document(value) -> Mapping:
    """An SCM given inline or as a path to a YAML/JSON file."""
    if isinstance(value, (str, Path)):
        try:
            loaded = yaml.safe_load(Path(value).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read SCM file {value}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"SCM file {value} is not valid YAML/JSON: {exc}") from None
        return loaded
    return value


def _set(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        doc = doc.setdefault(k, {})
        if not isinstance(doc, dict):
            raise ConfigError(f"config key {k!r} must be a mapping")
    doc[keys[-1]] = value


def _section(doc: Mapping, key: str) -> dict:
    value = doc.get(key) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"config section {key!r} must be a mapping")
    return dict(value)


@dataclass
class RunConfig:
    command: str
    document: dict  # fully resolved, defaults materialized
    threads: int

    def estimator(self) -> EstimatorConfig:
        est = self.document["estimator"]
        return EstimatorConfig(
            folds=est["folds"],
            truncation_quantile=est["truncation_quantile"],
            truncation_scope=est["truncation_scope"],
            paths=est["paths"]["mode"],
            path_cap=est["paths"]["cap"],
            seed=est["seed"],
            learners=self.learners(),
            threads=self.threads,
        )

    def learners(self) -> EnsembleSpec:
        lrn = self.document["learners"]
        try:
            members = tuple(learner_from_dict(m) for m in lrn["members"])
            return EnsembleSpec(members, int(lrn["cv_folds"]), lrn["stacking"],
                                seed=self.document["estimator"]["seed"])
        except LearnerError as exc:
            raise ConfigError(f"learners: {exc}") from None

    def pair(self) -> PolicyPair:
        pol = self.document["policies"]
        return PolicyPair(policy_from_config(pol["d_prime"]), policy_from_config(pol["d_star"]))

    def scm(self) -> ScmSpec:
        doc = self.document.get("scm")
        if doc is None:
            raise ConfigError(f"'{self.command}' needs an SCM (config key 'scm' or --builtin)")
        return ScmSpec.from_dict(_scm_document(doc))


def _default_learners() -> dict:
    spec = default_ensemble()
    return {
        "members": [learner_to_dict(m) for m in spec.members],
        "cv_folds": spec.cv_folds,
        "stacking": spec.stacking,
    }


def resolve(command: str, doc: dict, args: argparse.Namespace | None = None) -> RunConfig:
    """Merge flags into the document, validate it and materialize defaults."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    doc = copy.deepcopy(doc)
    doc["command"] = command
    if args is not None:
        if args.data is not None:
            doc["data"] = args.data
        if args.schema is not None:
            doc["schema"] = args.schema
        if args.seed is not None:
            _set(doc, "estimator.seed", args.seed)
        if args.builtin is not None:
            scm_doc = {"builtin": args.builtin}
            if args.U is not None:
                scm_doc["U"] = args.U
            if args.V is not None:
                scm_doc["V"] = args.V
            doc["scm"] = scm_doc
        if args.n is not None:
            doc["n"] = args.n
        if args.replicates is not None:
            _set(doc, "benchmark.replicates", args.replicates)
        if args.output is not None:
            _set(doc, "output.path", args.output)
        if args.format is not None:
            _set(doc, "output.format", args.format)

    est = _section(doc, "estimator")
    if est.get("seed") is None:
        raise ConfigError(f"estimator.seed is required for '{command}' (use --seed)")
    paths = est.get("paths", {})
    if isinstance(paths, str):
        paths = {"mode": paths}
    try:
        doc["estimator"] = {
            "seed": int(est["seed"]),
            "folds": int(est.get("folds", 3)),
            "truncation_quantile": float(est.get("truncation_quantile", 0.99)),
            "truncation_scope": str(est.get("truncation_scope", "family")),
            "paths": {
                "mode": str(paths.get("mode", "observed_only")),
                "cap": int(paths.get("cap", DEFAULT_PATH_CAP)),
            },
        }
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid estimator settings: {exc}") from None

    lrn = _section(doc, "learners")
    defaults = _default_learners()
    stacking = str(lrn.get("stacking", defaults["stacking"])).lower()
    if stacking not in _STACKING:
        raise ConfigError(f"learners.stacking must be convex or select, got {stacking!r}")
    members = lrn.get("members", defaults["members"])
    if not isinstance(members, list) or not members:
        raise ConfigError("learners.members must be a non-empty list")
    doc["learners"] = {
        "members": [dict(m) if isinstance(m, Mapping) else m for m in members],
        "cv_folds": int(lrn.get("cv_folds", defaults["cv_folds"])),
        "stacking": _STACKING[stacking],
    }

    pol = _section(doc, "policies")
    builtin_scm = isinstance(doc.get("scm"), Mapping) and doc["scm"].get("builtin") == "paper_s8"
    if builtin_scm and not pol:
        pair = two_period_policies()
        pol = {"d_prime": pair.d_prime.to_dict(), "d_star": pair.d_star.to_dict()}
    pol.setdefault("d_prime", {"builtin": "identity"})
    pol.setdefault("d_star", {"builtin": "identity"})
    doc["policies"] = {k: pol[k] for k in ("d_prime", "d_star")}

    out = _section(doc, "output")
    fmt = out.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError("output.format must be json or csv")
    doc["output"] = {"path": out.get("path"), "format": fmt}

    threads = (args.threads if args is not None and args.threads is not None else None)
    if threads is None:
        env = os.environ.get("MEDSEQ_THREADS")
        try:
            threads = int(env) if env else int(doc.get("threads", 1))
        except ValueError:
            raise ConfigError("MEDSEQ_THREADS must be an integer") from None
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    doc.pop("threads", None)

    if command in ("estimate", "decompose", "effectmod"):
        if doc.get("data") is None and doc.get("scm") is None:
            raise ConfigError(f"'{command}' needs --data (with --schema) or an SCM to simulate from")
        if doc.get("data") is not None:
            if doc.get("schema") is None:
                raise ConfigError("a data file needs a schema (--schema)")
            for key in ("data", "schema"):
                if not Path(str(doc[key])).exists():
                    raise ConfigError(f"{key} path does not exist: {doc[key]}")
        else:
            doc["n"] = int(doc.get("n", 1000))
    if command == "simulate":
        doc["n"] = int(doc.get("n", 1000))
    if command == "oracle":
        orc = _section(doc, "oracle")
        doc["oracle"] = {"replications": int(orc.get("replications", 1_000_000))}
    if command == "benchmark":
        b = _section(doc, "benchmark")
        truth = b.get("truth", "oracle")
        if not (truth in ("oracle", "closed_form") or isinstance(truth, (int, float))):
            raise ConfigError("benchmark.truth must be 'oracle', 'closed_form' or a number")
        doc["n"] = int(doc.get("n", 1000))
        doc["benchmark"] = {
            "replicates": int(b.get("replicates", 100)),
            "truth": truth,
            "oracle_replications": int(b.get("oracle_replications", 1_000_000)),
        }
    if command in ("simulate", "oracle", "benchmark") and doc.get("scm") is None:
        raise ConfigError(f"'{command}' needs an SCM (config key 'scm' or --builtin paper_s8)")
    run = RunConfig(command, doc, threads)
    # build everything once so configuration errors surface before any work
    run.estimator()
    run.pair()
    if doc.get("scm") is not None:
        run.scm()
    return run


def _dataset(run: RunConfig):
    doc = run.document
    if doc.get("data") is not None:
        schema = load_schema(doc["schema"])
        return load_panel(doc["data"], schema)
    return simulate(run.scm(), doc["n"], doc["estimator"]["seed"])


def _slopes_payload(decomp, dataset) -> dict:
    names = dataset.baseline_columns()
    X = dataset.frame[names]
    out = {}
    for contrast in ("total", "direct", "indirect"):
        estimate = getattr(decomp, contrast).estimate
        slopes = effect_modification_slopes(decomp.influence[contrast], X, estimate=estimate)
        out[contrast] = [{"variable": s.variable, "slope": s.slope, "se": s.se} for s in slopes]
    return out


def execute(run: RunConfig) -> dict:
    """Run the command and return its result payload."""
    cmd = run.command
    doc = run.document
    if cmd == "estimate":
        return estimate_theta(_dataset(run), run.pair(), run.estimator()).to_dict()
    if cmd in ("decompose", "effectmod"):
        data = _dataset(run)
        pair = run.pair()
        decomp = decompose_effects(data, pair.d_prime, pair.d_star, run.estimator())
        out = decomp.to_dict()
        if cmd == "effectmod":
            out["slopes"] = _slopes_payload(decomp, data)
        return out
    if cmd == "simulate":
        data = simulate(run.scm(), doc["n"], doc["estimator"]["seed"])
        frame = pd.read_csv(io.StringIO(data.to_csv()), keep_default_na=False)
        return {
            "n": data.n,
            "tau": data.tau,
            "schema": data.schema_dict(),
            "data": {c: frame[c].tolist() for c in frame.columns},
        }
    if cmd == "oracle":
        cfg = OracleConfig(doc["oracle"]["replications"], doc["estimator"]["seed"])
        res = oracle_theta(run.scm(), run.pair(), cfg).to_dict()
        scm = run.scm()
        if scm.label.get("builtin") == "paper_s8":
            res["closed_form"] = closed_form_theta(scm.label["U"], scm.label["V"])
        return res
    if cmd == "benchmark":
        scm = run.scm()
        pair = run.pair()
        b = doc["benchmark"]
        seed = doc["estimator"]["seed"]
        if b["truth"] == "oracle":
            truth = oracle_theta(scm, pair, OracleConfig(b["oracle_replications"], seed)).theta
        elif b["truth"] == "closed_form":
            if scm.label.get("builtin") != "paper_s8":
                raise ConfigError("closed-form truth is only known for the builtin paper_s8 SCM")
            truth = closed_form_theta(scm.label["U"], scm.label["V"])
        else:
            truth = float(b["truth"])
        res = benchmark(scm, pair, doc["n"], b["replicates"], run.estimator(), truth=truth,
                        seed=seed, threads=run.threads)
        table = [res.summary] if b["replicates"] > 0 else []
        return {"table": table, "replicates": res.replicates}
    raise ConfigError(f"unknown command {cmd!r}")  # pragma: no cover


def run(command: str, doc: dict, args: argparse.Namespace | None = None) -> tuple[dict, int]:
    """Resolve, execute and wrap into a result document; returns ``(document, exit code)``."""
    started = time.perf_counter()
    try:
        cfg = resolve(command, doc, args)
        result = execute(cfg)
    except ConfigError as exc:
        return _error_document(command, "config", exc), EXIT_CONFIG
    except DataError as exc:
        return _error_document(command, "data", exc), EXIT_DATA
    except (NumericalError, LearnerError) as exc:
        return _error_document(command, "numerical", exc), EXIT_NUMERIC
    document = {
        "command": command,
        "config": cfg.document,
        "result": result,
        "version": __version__,
        "wall_clock_seconds": time.perf_counter() - started,
    }
    return document, EXIT_OK


def _error_document(command: str, kind: str, exc: MedseqError) -> dict:
    return {"command": command, "error": {"kind": kind, "message": str(exc)}, "version": __version__}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medseq",
        description="Interventional mediation effects of longitudinal treatment policies.",
    )
    parser.add_argument("--version", action="version", version=f"medseq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON configuration document")
        p.add_argument("--data", help="panel file (delimiter-separated, header row)")
        p.add_argument("--schema", help="schema document for --data")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--output", help="write the result here instead of stdout")
        p.add_argument("--format", choices=("json", "csv"))
        p.add_argument("--builtin", choices=("paper_s8",), help="built-in simulation design")
        p.add_argument("--U", type=int, choices=(-1, 1))
        p.add_argument("--V", type=int, choices=(-1, 1))
        p.add_argument("--n", type=int)
        p.add_argument("--replicates", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = _load_document(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    document, code = run(args.command, doc, args)
    if code != EXIT_OK:
        err = document["error"]
        print(f"{err['kind']} error: {err['message']}", file=sys.stderr)
        return code
    fmt = document["config"]["output"]["format"]
    payload = emit(document, fmt)
    target = document["config"]["output"]["path"]
    if target:
        try:
            Path(target).write_bytes(payload)
        except OSError as exc:
            print(f"config error: cannot write {target}: {exc.strerror}", file=sys.stderr)
            return EXIT_CONFIG
        log.info("wrote %s", target)
    else:
        sys.stdout.write(payload.decode())
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
