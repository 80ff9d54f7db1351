"""Longitudinal panel data model.

A panel holds ``n`` units observed over ``tau`` timepoints.  Every column is
tagged with a role and a time, and the roles follow the within-period order
``L_t < A_t < Z_t < M_t < L_{t+1}`` with the outcome ``Y`` last.  Censoring
happens *after* treatment in a period: a unit whose status at ``t`` is
``censored`` has ``A_t`` observed but nothing from ``Z_t`` onward.
"""

from __future__ import annotations

import enum
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigError, DataError

ROLE_OFFSET = {"L": 0, "A": 1, "Z": 2, "M": 3}
STATUS_CODES = {"active": 0, "censored": 1, "deceased": 2}
STATUS_NAMES = {v: k for k, v in STATUS_CODES.items()}
DEFAULT_PATH_CAP = 4096


class Kind(enum.Enum):
    BaselineCovariate = "baseline"
    TimeCovariate = "covariate"
    Treatment = "treatment"
    IntermediateConfounder = "confounder"
    Mediator = "mediator"
    Outcome = "outcome"
    CensorIndicator = "censor"


_KIND_LETTER = {
    Kind.BaselineCovariate: "L",
    Kind.TimeCovariate: "L",
    Kind.Treatment: "A",
    Kind.IntermediateConfounder: "Z",
    Kind.Mediator: "M",
    Kind.Outcome: "Y",
}


@dataclass(frozen=True)
class VariableRole:
    kind: Kind
    time: int
    name: str

    @property
    def letter(self) -> str:
        return _KIND_LETTER.get(self.kind, "C")


def position(letter: str, t: int, tau: int) -> float:
    """Global ordering key of ``(letter, t)``; the outcome sits after ``M_tau``."""
    if letter == "Y":
        return 4.0 * tau
    if letter == "C":
        # censoring follows treatment inside a period
        return 4.0 * (t - 1) + 1.5
    try:
        return 4.0 * (t - 1) + ROLE_OFFSET[letter]
    except KeyError:
        raise ConfigError(f"unknown role {letter!r}") from None


def _as_groups(value: Any, tau: int, role: str, single: bool) -> tuple:
    if value is None:
        value = [[] for _ in range(tau)]
    if isinstance(value, str):
        raise ConfigError(f"nodes.{role} must list one entry per time, got a bare string")
    value = list(value)
    if len(value) != tau:
        raise ConfigError(
            f"time gap in nodes.{role}: expected {tau} entries (one per time), got {len(value)}"
        )
    out = []
    for t, entry in enumerate(value, start=1):
        names = [entry] if isinstance(entry, str) else list(entry or [])
        if single and len(names) != 1:
            raise ConfigError(f"nodes.{role} needs exactly one column at t={t}, got {names}")
        out.append(tuple(str(x) for x in names))
    if single:
        return tuple(g[0] for g in out)
    return tuple(out)


def _support(value: Any, tau: int, what: str) -> tuple[tuple[int, ...], ...]:
    if value is None:
        raise ConfigError(f"schema must declare {what}")
    value = list(value)
    per_time = value and all(isinstance(v, (list, tuple)) for v in value)
    groups = value if per_time else [value] * tau
    if len(groups) != tau:
        raise ConfigError(f"{what} lists {len(groups)} supports for tau={tau}")
    out = []
    for g in groups:
        levels = []
        for v in g:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{what} must be a finite set of integers, got {v!r}")
            if float(v) != int(v):
                raise ConfigError(f"{what} levels must be integers, got {v!r}")
            levels.append(int(v))
        if not levels:
            raise ConfigError(f"{what} must be non-empty")
        if len(set(levels)) != len(levels):
            raise ConfigError(f"{what} has duplicate levels: {levels}")
        out.append(tuple(sorted(levels)))
    return tuple(out)


@dataclass(frozen=True)
class PanelSchema:
    """Role declarations for a wide-format panel."""

    tau: int
    L: tuple[tuple[str, ...], ...]
    A: tuple[str, ...]
    Z: tuple[tuple[str, ...], ...]
    M: tuple[str, ...]
    Y: str
    mediator_support: tuple[tuple[int, ...], ...]
    treatment_support: tuple[int, ...] | None = None
    censor_columns: tuple[str, ...] = ()
    id_column: str | None = None

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PanelSchema":
        if not isinstance(doc, Mapping):
            raise ConfigError("schema must be a mapping")
        try:
            tau = int(doc["tau"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("schema.tau must be a positive integer") from None
        if tau < 1:
            raise ConfigError("schema.tau must be >= 1")
        nodes = doc.get("nodes")
        if not isinstance(nodes, Mapping):
            raise ConfigError("schema.nodes must map roles L/A/Z/M/Y to column names")
        unknown = set(nodes) - {"L", "A", "Z", "M", "Y"}
        if unknown:
            raise ConfigError(f"unknown column role(s) in schema.nodes: {sorted(unknown)}")
        for required in ("L", "A", "M", "Y"):
            if required not in nodes:
                raise ConfigError(f"schema.nodes.{required} is required")
        y = nodes["Y"]
        if isinstance(y, (list, tuple)):
            if len(y) != 1:
                raise ConfigError("exactly one outcome column is required")
            y = y[0]
        ts = doc.get("treatment_support")
        censor = doc.get("censor_columns") or ()
        if censor and len(censor) != tau:
            raise ConfigError(f"censor_columns needs {tau} entries, got {len(censor)}")
        schema = cls(
            tau=tau,
            L=_as_groups(nodes["L"], tau, "L", single=False),
            A=_as_groups(nodes["A"], tau, "A", single=True),
            Z=_as_groups(nodes.get("Z"), tau, "Z", single=False),
            M=_as_groups(nodes["M"], tau, "M", single=True),
            Y=str(y),
            mediator_support=_support(doc.get("mediator_support"), tau, "mediator_support"),
            treatment_support=None if ts is None else _support(ts, 1, "treatment_support")[0],
            censor_columns=tuple(str(c) for c in censor),
            id_column=doc.get("id_column"),
        )
        names = [r.name for r in schema.roles()]
        dupes = {x for x in names if names.count(x) > 1}
        if dupes:
            raise ConfigError(f"columns registered more than once: {sorted(dupes)}")
        return schema

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "tau": self.tau,
            "nodes": {
                "L": [list(g) for g in self.L],
                "A": list(self.A),
                "Z": [list(g) for g in self.Z],
                "M": list(self.M),
                "Y": self.Y,
            },
            "mediator_support": [list(s) for s in self.mediator_support],
        }
        if self.treatment_support is not None:
            doc["treatment_support"] = list(self.treatment_support)
        if self.censor_columns:
            doc["censor_columns"] = list(self.censor_columns)
        if self.id_column:
            doc["id_column"] = self.id_column
        return doc

    def roles(self) -> list[VariableRole]:
        """All registered variables in global time order."""
        out: list[VariableRole] = []
        for t in range(1, self.tau + 1):
            kind = Kind.BaselineCovariate if t == 1 else Kind.TimeCovariate
            out.extend(VariableRole(kind, t, c) for c in self.L[t - 1])
            out.append(VariableRole(Kind.Treatment, t, self.A[t - 1]))
            out.extend(VariableRole(Kind.IntermediateConfounder, t, c) for c in self.Z[t - 1])
            out.append(VariableRole(Kind.Mediator, t, self.M[t - 1]))
        out.append(VariableRole(Kind.Outcome, self.tau + 1, self.Y))
        return out

    def columns_before(self, letter: str, t: int) -> list[str]:
        cut = position(letter, t, self.tau)
        return [
            r.name for r in self.roles() if position(r.letter, r.time, self.tau) < cut
        ]


@dataclass(frozen=True)
class HistoryView:
    unit: int
    anchor: tuple[str, int]
    names: tuple[str, ...]
    values: np.ndarray


@dataclass(frozen=True)
class MediatorPath:
    values: tuple[int, ...]

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def label(self) -> str:
        return "".join(str(v) for v in self.values) if all(
            0 <= v < 10 for v in self.values
        ) else "-".join(str(v) for v in self.values)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    membership: np.ndarray  # labels in 1..k
    seed: int

    def train_test(self):
        """Yield ``(label, train_mask, test_mask)`` for each fold in label order."""
        for label in range(1, self.k + 1):
            test = self.membership == label
            yield label, ~test, test


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Immutable wide panel with role registry and per-time status channel.

    ``status`` has shape ``(n, tau)`` with codes from :data:`STATUS_CODES`.
    ``weights`` are optional frequency weights (e.g. probabilities of an
    enumerated configuration table); ``None`` means equal weights.
    """

    schema: PanelSchema
    frame: pd.DataFrame
    status: np.ndarray
    weights: np.ndarray | None = None
    imputed: Mapping[str, int] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def tau(self) -> int:
        return self.schema.tau

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy(dtype=float)

    def treatment(self, t: int) -> np.ndarray:
        return self.column(self.schema.A[t - 1])

    def mediator(self, t: int) -> np.ndarray:
        return self.column(self.schema.M[t - 1])

    def outcome(self) -> np.ndarray:
        return self.column(self.schema.Y)

    def mediators(self) -> np.ndarray:
        return np.column_stack([self.mediator(t) for t in range(1, self.tau + 1)])

    def uncensored(self, t: int) -> np.ndarray:
        """Units whose period-``t`` variables after treatment are observed."""
        if t <= 0:
            return np.ones(self.n, dtype=bool)
        t = min(t, self.tau)
        return self.status[:, t - 1] != STATUS_CODES["censored"]

    @property
    def has_censoring(self) -> bool:
        return bool(np.any(self.status == STATUS_CODES["censored"]))

    def baseline_columns(self) -> list[str]:
        return list(self.schema.L[0])

    def treatment_support(self) -> tuple[int, ...]:
        if self.schema.treatment_support is not None:
            return self.schema.treatment_support
        vals = np.unique(np.concatenate([self.treatment(t) for t in range(1, self.tau + 1)]))
        return tuple(int(v) for v in vals)

    def history_names(self, anchor: tuple[str, int]) -> list[str]:
        letter, t = anchor
        self._check_anchor(letter, t)
        return self.schema.columns_before(letter, t)

    def history_matrix(self, anchor: tuple[str, int]) -> tuple[list[str], np.ndarray]:
        names = self.history_names(anchor)
        if not names:
            return names, np.zeros((self.n, 0))
        return names, self.frame[names].to_numpy(dtype=float)

    def _check_anchor(self, letter: str, t: int) -> None:
        if letter == "Y":
            if t != self.tau + 1:
                raise DataError(f"outcome anchor must be at t={self.tau + 1}")
            return
        if letter not in ROLE_OFFSET or not 1 <= t <= self.tau:
            raise DataError(f"unregistered anchor {(letter, t)}")

    def mean(self, values: np.ndarray) -> float:
        return float(np.average(values, weights=self.weights))

    def to_csv(self, path_or_buf=None) -> str | None:
        out = self.frame.copy()
        for t in range(1, self.tau + 1):
            out[f"status_{t}"] = [STATUS_NAMES[int(c)] for c in self.status[:, t - 1]]
        return out.to_csv(path_or_buf, index=False)

    def schema_dict(self) -> dict[str, Any]:
        return self.schema.to_dict()


def _read_table(source, sep: str) -> pd.DataFrame:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        frame = pd.read_csv(source, sep=sep, keep_default_na=False, na_values=[""], dtype=str)
    except pd.errors.ParserError as exc:
        raise DataError(f"ragged unit records: {exc}") from None
    except (pd.errors.EmptyDataError, FileNotFoundError) as exc:
        raise DataError(str(exc)) from None
    return frame


def load_schema(source) -> PanelSchema:
    if isinstance(source, PanelSchema):
        return source
    if isinstance(source, Mapping):
        return PanelSchema.from_dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        try:
            source = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read schema: {exc}") from None
    return PanelSchema.from_dict(yaml.safe_load(source))


def _to_float(frame: pd.DataFrame, col: str) -> np.ndarray:
    try:
        vals = pd.to_numeric(frame[col], errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError):
        raise DataError(f"column {col!r} has non-numeric entries") from None
    if np.any(np.isinf(vals)):
        raise DataError(f"column {col!r} has infinite entries")
    return vals


def _status_matrix(frame: pd.DataFrame, schema: PanelSchema) -> np.ndarray:
    n, tau = len(frame), schema.tau
    status = np.zeros((n, tau), dtype=np.int8)
    for t in range(1, tau + 1):
        col = f"status_{t}"
        if col in frame:
            raw = frame[col].fillna("active").str.strip().str.lower()
            bad = set(raw) - set(STATUS_CODES)
            if bad:
                raise DataError(f"{col} has unknown markers {sorted(bad)}")
            status[:, t - 1] = raw.map(STATUS_CODES).to_numpy()
        if schema.censor_columns:
            c = _to_float(frame, schema.censor_columns[t - 1])
            c = np.nan_to_num(c, nan=0.0)
            if not np.all(np.isin(c, (0.0, 1.0))):
                raise DataError(f"censor column {schema.censor_columns[t - 1]!r} must be 0/1")
            hit = (c == 1) & (status[:, t - 1] == 0)
            status[hit, t - 1] = STATUS_CODES["censored"]
    # absorbing: the first non-active marker persists
    for t in range(1, tau):
        prev = status[:, t - 1]
        carry = prev != 0
        status[carry, t] = prev[carry]
    return status


def load_panel(source, schema, sep: str = ",") -> PanelDataset:
    """Read a delimiter-separated wide table and apply the missing-data rules.

    Baseline (``L_1``) gaps get the column mean plus a ``<col>_missing``
    indicator registered as a baseline covariate.  Later gaps are filled by
    carrying the same-slot variable from the previous period forward; a slot
    with no predecessor falls back to the column mean among observed units.
    """
    schema = load_schema(schema)
    frame = _read_table(source, sep)
    return build_panel(frame, schema)


def build_panel(frame: pd.DataFrame, schema: PanelSchema, weights=None) -> PanelDataset:
    schema = load_schema(schema)
    frame = frame.copy()
    declared = {r.name for r in schema.roles()} | set(schema.censor_columns)
    status_cols = {f"status_{t}" for t in range(1, schema.tau + 1)}
    extra = set(frame.columns) - declared - status_cols - {schema.id_column}
    if extra:
        raise DataError(f"columns with unknown role: {sorted(extra)}")
    missing = declared - set(frame.columns)
    if missing:
        raise DataError(f"declared columns absent from data: {sorted(missing)}")
    if len(frame) == 0:
        raise DataError("panel has no units")
    if schema.id_column and frame[schema.id_column].duplicated().any():
        raise DataError(f"duplicate unit ids in {schema.id_column!r}")

    status = _status_matrix(frame, schema)
    values = {r.name: _to_float(frame, r.name) for r in schema.roles()}
    n, tau = len(frame), schema.tau
    imputed: dict[str, int] = {}
    observed = {}  # column -> mask of units for which the value must be observed
    for r in schema.roles():
        if r.letter == "Y":
            observed[r.name] = status[:, tau - 1] != STATUS_CODES["censored"]
        elif r.letter in ("L",) and r.time == 1:
            observed[r.name] = np.ones(n, dtype=bool)
        elif r.letter in ("L",):
            observed[r.name] = status[:, r.time - 2] != STATUS_CODES["censored"]
        elif r.letter == "A":
            prev = status[:, r.time - 2] if r.time > 1 else np.zeros(n)
            observed[r.name] = prev != STATUS_CODES["censored"]
        else:
            observed[r.name] = status[:, r.time - 1] != STATUS_CODES["censored"]

    baseline = list(schema.L[0])
    new_baseline = list(baseline)
    for col in baseline:
        v = values[col]
        gap = np.isnan(v)
        if gap.any():
            if gap.all():
                raise DataError(f"baseline column {col!r} is entirely missing")
            v = np.where(gap, float(np.mean(v[~gap])), v)
            values[col] = v
            ind = f"{col}_missing"
            if ind in values or ind in frame.columns:
                raise DataError(f"cannot add indicator column {ind!r}: name taken")
            values[ind] = gap.astype(float)
            new_baseline.append(ind)
            imputed[col] = int(gap.sum())

    def predecessor(letter: str, t: int, j: int) -> str | None:
        if t <= 1:
            return None
        if letter == "A":
            return schema.A[t - 2]
        if letter == "M":
            return schema.M[t - 2]
        groups = schema.L if letter == "L" else schema.Z
        prev = groups[t - 2]
        return prev[j] if j < len(prev) else None

    for r in schema.roles():
        if r.letter == "Y" or (r.letter == "L" and r.time == 1):
            continue
        if r.letter in ("L", "Z"):
            j = (schema.L if r.letter == "L" else schema.Z)[r.time - 1].index(r.name)
        else:
            j = 0
        v = values[r.name]
        gap = np.isnan(v)
        if not gap.any():
            continue
        src = predecessor(r.letter, r.time, j)
        filled = v.copy()
        if src is not None:
            filled = np.where(gap, values[src], filled)
        still = np.isnan(filled)
        if still.any():
            obs = ~np.isnan(v) & observed[r.name]
            fill = float(np.mean(v[obs])) if obs.any() else 0.0
            filled = np.where(still, fill, filled)
        n_obs_gap = int(np.sum(gap & observed[r.name]))
        if n_obs_gap:
            imputed[r.name] = n_obs_gap
        values[r.name] = filled

    y = values[schema.Y]
    gap_y = np.isnan(y)
    if np.any(gap_y & observed[schema.Y]):
        raise DataError("outcome missing for units that are not censored")
    values[schema.Y] = np.where(gap_y, 0.0, y)

    for t in range(1, tau + 1):
        m = values[schema.M[t - 1]]
        obs = observed[schema.M[t - 1]]
        supp = schema.mediator_support[t - 1]
        if not np.all(np.isin(m[obs], supp)):
            bad = sorted(set(m[obs]) - set(supp))
            raise DataError(f"mediator {schema.M[t - 1]!r} has values outside support: {bad}")
        if schema.treatment_support is not None:
            a = values[schema.A[t - 1]]
            obs_a = observed[schema.A[t - 1]]
            if not np.all(np.isin(a[obs_a], schema.treatment_support)):
                raise DataError(f"treatment {schema.A[t - 1]!r} has values outside support")

    if new_baseline != baseline:
        schema = PanelSchema(
            tau=schema.tau,
            L=(tuple(new_baseline),) + schema.L[1:],
            A=schema.A,
            Z=schema.Z,
            M=schema.M,
            Y=schema.Y,
            mediator_support=schema.mediator_support,
            treatment_support=schema.treatment_support,
            censor_columns=(),
            id_column=schema.id_column,
        )
    else:
        schema = PanelSchema(**{**schema.__dict__, "censor_columns": ()})
    order = [r.name for r in schema.roles()]
    data = {}
    if schema.id_column:
        data[schema.id_column] = frame[schema.id_column].to_numpy()
    for name in order:
        data[name] = values[name]
    out = pd.DataFrame(data)
    w = None if weights is None else np.asarray(weights, dtype=float)
    if w is not None and (w.shape != (n,) or np.any(w < 0) or not np.isfinite(w).all()):
        raise DataError("weights must be a finite nonnegative vector with one entry per unit")
    return PanelDataset(schema=schema, frame=out, status=status, weights=w, imputed=imputed)


def history(dataset: PanelDataset, unit: int, anchor: tuple[str, int]) -> HistoryView:
    """Values of every variable strictly preceding ``anchor`` for one unit."""
    names = dataset.history_names(anchor)
    if not 0 <= unit < dataset.n:
        raise DataError(f"unit index {unit} out of range")
    vals = dataset.frame[names].iloc[unit].to_numpy(dtype=float) if names else np.zeros(0)
    return HistoryView(unit=unit, anchor=tuple(anchor), names=tuple(names), values=vals)


def enumerate_mediator_paths(
    dataset: PanelDataset, mode: str = "observed_only", cap: int = DEFAULT_PATH_CAP
) -> list[MediatorPath]:
    supports = dataset.schema.mediator_support
    if mode == "full":
        count = math.prod(len(s) for s in supports)
        if count > cap:
            raise DataError(
                f"{count} mediator paths exceed cap {cap}; reduce tau or use observed_only"
            )
        return [MediatorPath(tuple(p)) for p in itertools.product(*supports)]
    if mode != "observed_only":
        raise ConfigError(f"unknown path mode {mode!r}")
    keep = dataset.uncensored(dataset.tau)
    if dataset.weights is not None:
        keep = keep & (dataset.weights > 0)
    rows = dataset.mediators()[keep].astype(int)
    uniq = sorted({tuple(int(x) for x in r) for r in rows})
    if len(uniq) > cap:
        raise DataError(f"{len(uniq)} observed mediator paths exceed cap {cap}")
    return [MediatorPath(p) for p in uniq]


def assign_folds(dataset_or_n, k: int, seed: int) -> FoldAssignment:
    n = dataset_or_n if isinstance(dataset_or_n, (int, np.integer)) else dataset_or_n.n
    if k < 2:
        raise ConfigError("fold count must be at least 2")
    if k > n:
        raise DataError(f"cannot split {n} units into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % k + 1
    return FoldAssignment(k=k, membership=labels, seed=seed)


def from_arrays(
    columns: Mapping[str, Sequence[float]],
    schema,
    status: np.ndarray | None = None,
    weights: Iterable[float] | None = None,
) -> PanelDataset:
    """Build a panel directly from in-memory columns (simulators, tests)."""
    schema = load_schema(schema)
    frame = pd.DataFrame({k: np.asarray(v, dtype=float) for k, v in columns.items()})
    if status is not None:
        for t in range(1, schema.tau + 1):
            frame[f"status_{t}"] = [STATUS_NAMES[int(c)] for c in np.asarray(status)[:, t - 1]]
    return build_panel(frame, schema, weights=None if weights is None else np.asarray(list(weights)))
