"""Observed data for nested trial designs.

Every individual contributes ``(X, S, S*A, S*Y)``: covariates for everyone,
treatment and outcome only for trial participants (``S = 1``).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ParseError, SchemaError, TiltwiseWarning, ValidationError


class ObservedRow(NamedTuple):
    x: tuple
    s: int
    a: Optional[int]
    y: Optional[int]


@dataclass(frozen=True)
class CohortSummary:
    n_total: int
    n_randomized: int
    n_nonrandomized: int
    n_arm1: int
    n_arm0: int
    outcome_rate_by_arm: tuple  # (arm 0, arm 1); nan for an empty arm

    def to_dict(self):
        return {
            "n_total": self.n_total,
            "n_randomized": self.n_randomized,
            "n_nonrandomized": self.n_nonrandomized,
            "n_arm1": self.n_arm1,
            "n_arm0": self.n_arm0,
            "outcome_rate_arm0": self.outcome_rate_by_arm[0],
            "outcome_rate_arm1": self.outcome_rate_by_arm[1],
        }


@dataclass(frozen=True, eq=False)
class ObservedDataset:
    """Column-oriented, immutable nested-trial dataset.

    ``a`` and ``y`` are float arrays holding 0/1 for trial rows and NaN for
    non-randomized rows.
    """

    x: np.ndarray
    s: np.ndarray
    a: np.ndarray
    y: np.ndarray
    covariate_names: tuple
    n_ignored: int = field(default=0)

    def __post_init__(self):
        x = np.array(self.x, dtype=float, copy=True)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        s = np.array(self.s, dtype=np.int8, copy=True)
        a = np.array(self.a, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True)
        for arr in (x, s, a, y):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        self._check()

    def _check(self):
        n = len(self.s)
        if n == 0:
            raise ValidationError("empty dataset")
        if self.x.shape != (n, len(self.covariate_names)):
            raise ValidationError(
                f"covariate matrix has shape {self.x.shape}, expected "
                f"({n}, {len(self.covariate_names)})"
            )
        if len(self.a) != n or len(self.y) != n:
            raise ValidationError("s, a and y must have equal length")
        if not np.all(np.isfinite(self.x)):
            raise ValidationError("covariate values must be finite")
        if not np.all((self.s == 0) | (self.s == 1)):
            raise ValidationError("s must be 0 or 1")
        trial = self.s == 1
        for name, col in (("a", self.a), ("y", self.y)):
            if np.any(np.isnan(col[trial])):
                raise ValidationError(f"{name} must be present for every row with s=1")
            if np.any(~np.isnan(col[~trial])):
                raise ValidationError(f"{name} must be absent for rows with s=0")
            vals = col[trial]
            if not np.all((vals == 0) | (vals == 1)):
                raise ValidationError(f"{name} must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.s)

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    @property
    def rows(self) -> list:
        out = []
        for i in range(self.n):
            trial = self.s[i] == 1
            out.append(
                ObservedRow(
                    tuple(float(v) for v in self.x[i]),
                    int(self.s[i]),
                    int(self.a[i]) if trial else None,
                    int(self.y[i]) if trial else None,
                )
            )
        return out

    def arm_mask(self, arm: int) -> np.ndarray:
        """Boolean mask of trial rows assigned to ``arm``."""
        return (self.s == 1) & (self.a == arm)

    def take(self, indices) -> "ObservedDataset":
        idx = np.asarray(indices)
        return ObservedDataset(
            self.x[idx], self.s[idx], self.a[idx], self.y[idx], self.covariate_names
        )

    def drop(self, index: int) -> "ObservedDataset":
        keep = np.ones(self.n, dtype=bool)
        keep[index] = False
        return self.take(np.flatnonzero(keep))

    def require_arms(self):
        for arm in (0, 1):
            if not np.any(self.arm_mask(arm)):
                raise ValidationError(f"no trial rows in arm {arm}")

    @classmethod
    def from_rows(cls, rows: Iterable, covariate_names: Sequence[str]) -> "ObservedDataset":
        rows = [r if isinstance(r, ObservedRow) else ObservedRow(*r) for r in rows]
        if not rows:
            raise ValidationError("empty dataset")
        x = np.array([list(r.x) for r in rows], dtype=float).reshape(len(rows), -1)
        s = np.array([r.s for r in rows])
        a = np.array([np.nan if r.a is None else r.a for r in rows], dtype=float)
        y = np.array([np.nan if r.y is None else r.y for r in rows], dtype=float)
        return cls(x, s, a, y, tuple(covariate_names))


def summarize(d: ObservedDataset) -> CohortSummary:
    trial = d.s == 1
    rates = []
    counts = []
    for arm in (0, 1):
        mask = d.arm_mask(arm)
        counts.append(int(mask.sum()))
        rates.append(float(d.y[mask].mean()) if mask.any() else float("nan"))
    return CohortSummary(
        n_total=d.n,
        n_randomized=int(trial.sum()),
        n_nonrandomized=int((~trial).sum()),
        n_arm1=counts[1],
        n_arm0=counts[0],
        outcome_rate_by_arm=tuple(rates),
    )


@dataclass(frozen=True)
class Schema:
    covariates: tuple
    s: str = "s"
    a: str = "a"
    y: str = "y"
    one_hot: tuple = ()

    @classmethod
    def from_mapping(cls, m: Mapping) -> "Schema":
        missing = [k for k in ("covariates", "s", "a", "y") if k not in m]
        if missing:
            raise SchemaError(f"schema is missing keys: {', '.join(missing)}")
        covs = m["covariates"]
        if isinstance(covs, str) or not covs:
            raise SchemaError("schema 'covariates' must be a non-empty list")
        one_hot = tuple(m.get("one_hot", ()))
        unknown = set(one_hot) - set(covs)
        if unknown:
            raise SchemaError(f"one_hot columns not among covariates: {sorted(unknown)}")
        return cls(tuple(covs), m["s"], m["a"], m["y"], one_hot)

    @classmethod
    def from_json(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.from_mapping(json.load(fh))


def _parse_binary(value: str, column: str, line: int) -> Optional[int]:
    v = value.strip()
    if v == "":
        return None
    try:
        f = float(v)
    except ValueError:
        f = None
    if f not in (0.0, 1.0):
        raise ParseError(f"line {line}: column {column!r} must be 0 or 1, got {value!r}")
    return int(f)


def load_dataset(path, schema) -> ObservedDataset:
    """Read a CSV file into a validated :class:`ObservedDataset`.

    Rows with ``s = 0`` that carry a treatment or outcome value are kept,
    but those values are dropped; the count is stored in ``n_ignored`` and
    reported as a :class:`TiltwiseWarning`.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = list(schema.covariates) + [schema.s, schema.a, schema.y]
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"missing columns: {', '.join(missing)}")
        raw = list(reader)
    if not raw:
        raise ValidationError("empty dataset")

    levels = {
        col: sorted({r[col].strip() for r in raw if r[col].strip() != ""}, key=_level_key)
        for col in schema.one_hot
    }
    names = []
    for col in schema.covariates:
        if col in levels:
            names.extend(f"{col}={lvl}" for lvl in levels[col][1:])
        else:
            names.append(col)

    xs, ss, as_, ys = [], [], [], []
    n_ignored = 0
    for line, r in enumerate(raw, start=2):
        vec = []
        for col in schema.covariates:
            v = r[col].strip()
            if v == "":
                raise ValidationError(
                    f"line {line}: missing value for covariate {col!r} "
                    "(complete-case input required)"
                )
            if col in levels:
                vec.extend(1.0 if v == lvl else 0.0 for lvl in levels[col][1:])
                continue
            try:
                vec.append(float(v))
            except ValueError:
                raise ParseError(f"line {line}: covariate {col!r} is not numeric: {v!r}")
        s = _parse_binary(r[schema.s], schema.s, line)
        if s is None:
            raise ValidationError(f"line {line}: s is missing")
        a = _parse_binary(r[schema.a], schema.a, line)
        y = _parse_binary(r[schema.y], schema.y, line)
        if s == 0:
            if a is not None or y is not None:
                n_ignored += 1
            a = y = None
        elif a is None or y is None:
            raise ValidationError(f"line {line}: rows with s=1 need both a and y")
        xs.append(vec)
        ss.append(s)
        as_.append(np.nan if a is None else a)
        ys.append(np.nan if y is None else y)

    if n_ignored:
        warnings.warn(
            f"ignored treatment/outcome values on {n_ignored} rows with s=0",
            TiltwiseWarning,
            stacklevel=2,
        )
    return ObservedDataset(
        np.array(xs, dtype=float).reshape(len(xs), len(names)),
        np.array(ss),
        np.array(as_, dtype=float),
        np.array(ys, dtype=float),
        tuple(names),
        n_ignored,
    )


def _level_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def write_dataset(d: ObservedDataset, path, schema: Optional[Schema] = None) -> None:
    """Write ``d`` as CSV; reals use ``repr`` so reloading is exact."""
    s_col, a_col, y_col = ("s", "a", "y") if schema is None else (schema.s, schema.a, schema.y)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(d.covariate_names) + [s_col, a_col, y_col])
        for i in range(d.n):
            trial = d.s[i] == 1
            w.writerow(
                [repr(float(v)) for v in d.x[i]]
                + [int(d.s[i]), int(d.a[i]) if trial else "", int(d.y[i]) if trial else ""]
            )


def default_schema(d: ObservedDataset) -> dict:
    return {"covariates": list(d.covariate_names), "s": "s", "a": "a", "y": "y"}
