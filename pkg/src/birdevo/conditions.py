"""Fixed-length numeric encoding of per-recording condition tables.

Numeric variables are z-scored, categorical variables one-hot encoded over
a sorted level list, and cyclic variables (time of day, day of year) mapped
to ``(sin, cos)`` of their phase.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
CYCLIC = "cyclic"
KINDS = (NUMERIC, CATEGORICAL, CYCLIC)

N_CONDITION_VARIABLES = 41

DEFAULT_PERIODS = {"time_of_day": 24.0, "day_of_year": 365.25}

ConditionRecord = Mapping[str, object]


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    mean: float | None = None
    std: float | None = None
    levels: tuple[str, ...] | None = None
    period: float | None = None

    @property
    def width(self) -> int:
        if self.kind == CATEGORICAL:
            return len(self.levels)
        return 2 if self.kind == CYCLIC else 1

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"variable {self.name}: unknown kind {self.kind!r}")
        if any(c.isspace() for c in self.name) or "=" in self.name or not self.name:
            raise DataError(f"variable name {self.name!r} must be non-empty without spaces or '='")
        if self.kind == NUMERIC and not (self.std is not None and self.std > 0 and math.isfinite(self.mean)):
            raise DataError(f"variable {self.name}: numeric variables need a finite mean and std > 0")
        if self.kind == CATEGORICAL:
            if not self.levels:
                raise DataError(f"variable {self.name}: categorical level list is empty")
            for lvl in self.levels:
                if not lvl or "|" in lvl or any(c.isspace() for c in lvl):
                    raise DataError(f"variable {self.name}: level {lvl!r} is not a bare token")
        if self.kind == CYCLIC and not (self.period and self.period > 0):
            raise DataError(f"variable {self.name}: cyclic variables need a positive period")

    def to_text(self) -> str:
        head = f"name={self.name} kind={self.kind}"
        if self.kind == NUMERIC:
            return f"{head} mean={self.mean!r} std={self.std!r}"
        if self.kind == CATEGORICAL:
            return f"{head} levels={'|'.join(self.levels)}"
        return f"{head} period={self.period!r}"

    @classmethod
    def from_text(cls, line: str) -> "Variable":
        try:
            f = dict(tok.split("=", 1) for tok in line.split())
            kind = f["kind"]
            if kind == NUMERIC:
                var = cls(f["name"], kind, mean=float(f["mean"]), std=float(f["std"]))
            elif kind == CATEGORICAL:
                var = cls(f["name"], kind, levels=tuple(f["levels"].split("|")))
            else:
                var = cls(f["name"], kind, period=float(f["period"]))
        except (KeyError, ValueError):
            raise DataError(f"malformed schema line {line!r}") from None
        var.validate()
        return var


@dataclass(frozen=True)
class ConditionSchema:
    variables: tuple[Variable, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DataError("schema variable names must be unique")
        for v in self.variables:
            v.validate()

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def width(self) -> int:
        return sum(v.width for v in self.variables)

    def kinds(self) -> dict[str, str]:
        return {v.name: v.kind for v in self.variables}

    def require_count(self, n: int = N_CONDITION_VARIABLES) -> "ConditionSchema":
        if len(self.variables) != n:
            raise DataError(f"schema has {len(self.variables)} variables, expected {n}")
        return self

    def to_text(self) -> str:
        return "".join(v.to_text() + "\n" for v in self.variables)

    @classmethod
    def from_text(cls, text: str) -> "ConditionSchema":
        return cls(tuple(Variable.from_text(ln) for ln in text.splitlines() if ln.strip()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "ConditionSchema":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise DataError(f"cannot read schema {path}: {exc.strerror}") from None


def encode(record: ConditionRecord, schema: ConditionSchema) -> np.ndarray:
    out = np.empty(schema.width, dtype=np.float64)
    pos = 0
    for var in schema.variables:
        if var.name not in record:
            raise DataError(f"record is missing variable {var.name!r}")
        value = record[var.name]
        if var.kind == NUMERIC:
            out[pos] = (float(value) - var.mean) / var.std
        elif var.kind == CATEGORICAL:
            try:
                hot = var.levels.index(str(value))
            except ValueError:
                raise DataError(f"variable {var.name!r}: unknown level {value!r}") from None
            out[pos : pos + var.width] = 0.0
            out[pos + hot] = 1.0
        else:
            phase = 2 * math.pi * float(value) / var.period
            out[pos] = math.sin(phase)
            out[pos + 1] = math.cos(phase)
        pos += var.width
    extra = set(record) - set(schema.names)
    if extra:
        raise DataError(f"record has variables outside the schema: {sorted(extra)}")
    return out


def encode_many(records: Sequence[ConditionRecord], schema: ConditionSchema, dtype=np.float32) -> np.ndarray:
    if not records:
        return np.zeros((0, schema.width), dtype=dtype)
    return np.stack([encode(r, schema) for r in records]).astype(dtype)


def fit_schema(
    records: Sequence[ConditionRecord],
    kinds: Mapping[str, str],
    periods: Mapping[str, float] | None = None,
) -> ConditionSchema:
    """Fit z-score statistics and level lists; pass only training-split records.

    ``kinds`` maps each variable name, in schema order, to its kind.  Cyclic
    periods default to 24 for ``time_of_day`` and 365.25 for ``day_of_year``.
    """
    if len(records) < 2:
        raise DataError("fit_schema needs at least two records")
    periods = {**DEFAULT_PERIODS, **(periods or {})}
    variables = []
    for name, kind in kinds.items():
        try:
            values = [r[name] for r in records]
        except KeyError:
            raise DataError(f"a record is missing variable {name!r}") from None
        if kind == NUMERIC:
            arr = np.asarray(values, dtype=np.float64)
            std = float(arr.std(ddof=1))
            if not std > 0:
                raise DataError(f"numeric variable {name!r} is constant on the training split")
            variables.append(Variable(name, NUMERIC, mean=float(arr.mean()), std=std))
        elif kind == CATEGORICAL:
            variables.append(Variable(name, CATEGORICAL, levels=tuple(sorted({str(v) for v in values}))))
        elif kind == CYCLIC:
            if name not in periods:
                raise DataError(f"no period known for cyclic variable {name!r}")
            variables.append(Variable(name, CYCLIC, period=float(periods[name])))
        else:
            raise DataError(f"variable {name!r}: unknown kind {kind!r}")
    return ConditionSchema(tuple(variables))


def write_table(path: str | Path, records: Sequence[ConditionRecord], names: Sequence[str]) -> None:
    """Condition table CSV, one row per record in order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in records:
            w.writerow([repr(r[n]) if isinstance(r[n], float) else r[n] for n in names])


def read_table(path: str | Path, kinds: Mapping[str, str]) -> list[dict[str, object]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read condition table {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty condition table")
    header = rows[0]
    missing = set(kinds) - set(header)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        rec: dict[str, object] = {}
        for name, cell in zip(header, row):
            kind = kinds.get(name)
            if kind is None:
                continue
            try:
                rec[name] = cell if kind == CATEGORICAL else float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: {name}={cell!r} is not a number") from None
        out.append(rec)
    return out


def iter_segments(schema: ConditionSchema) -> Iterable[tuple[Variable, slice]]:
    pos = 0
    for v in schema.variables:
        yield v, slice(pos, pos + v.width)
        pos += v.width
