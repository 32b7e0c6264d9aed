"""Envelope database records and the CSV schema they are stored in."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvariantViolation, ParseError

INPUT_NAMES = ("h", "gamma", "ll", "ul")
CSV_COLUMNS = (
    "h_ft",
    "gamma_deg",
    "ll_deg",
    "ul_deg",
    "n_trim",
    "centroid_v_kt",
    "centroid_psidot_dps",
)
TARGETS = {
    "n_trim": ("n_trim",),
    "centroid_v": ("centroid_v",),
    "centroid_psidot": ("centroid_psidot",),
    "centroid": ("centroid_v", "centroid_psidot"),
}


@dataclass(frozen=True)
class InputVector:
    """Flight condition and rudder limits: altitude (ft), flight path angle
    (deg), lower and upper rudder deflection limits (deg)."""

    h: float
    gamma: float
    ll: float
    ul: float

    def validate(self, line: int | None = None) -> "InputVector":
        values = (self.h, self.gamma, self.ll, self.ul)
        if not all(math.isfinite(v) for v in values):
            raise InvariantViolation("non-finite input", line)
        if self.ll > self.ul:
            raise InvariantViolation(f"ll={self.ll} > ul={self.ul}", line)
        if not (-30.0 <= self.ll <= 30.0 and -30.0 <= self.ul <= 30.0):
            raise InvariantViolation("rudder limits outside [-30, 30] deg", line)
        if not -5.0 <= self.gamma <= 5.0:
            raise InvariantViolation(f"gamma={self.gamma} outside [-5, 5] deg", line)
        if self.h < 0:
            raise InvariantViolation(f"negative altitude {self.h}", line)
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.h, self.gamma, self.ll, self.ul], dtype=float)


@dataclass(frozen=True)
class MfeRecord:
    """Characteristics of one constant-(h, gamma, failure) envelope slice."""

    input: InputVector
    n_trim: int
    centroid_v: float = math.nan
    centroid_psidot: float = math.nan

    @property
    def empty(self) -> bool:
        return self.n_trim == 0

    def validate(self, line: int | None = None) -> "MfeRecord":
        self.input.validate(line)
        if self.n_trim < 0:
            raise InvariantViolation("negative n_trim", line)
        if not self.empty and not (
            math.isfinite(self.centroid_v) and math.isfinite(self.centroid_psidot)
        ):
            raise InvariantViolation("non-empty record without a finite centroid", line)
        return self

    def target(self, name: str) -> float:
        return float(getattr(self, name))


def inputs_array(records: Sequence[MfeRecord | InputVector]) -> np.ndarray:
    """Stack inputs into an ``(m, 4)`` array in (h, gamma, ll, ul) order."""
    rows = [(r.input if isinstance(r, MfeRecord) else r).as_array() for r in records]
    return np.vstack(rows) if rows else np.empty((0, 4))


def targets_array(records: Sequence[MfeRecord], target: str = "n_trim") -> np.ndarray:
    """Targets for a selector in :data:`TARGETS`; 1-D for single outputs."""
    try:
        names = TARGETS[target]
    except KeyError:
        raise ValueError(f"unknown target {target!r}; choose from {sorted(TARGETS)}") from None
    y = np.array([[r.target(n) for n in names] for r in records], dtype=float)
    return y[:, 0] if len(names) == 1 else y


def non_empty(records: Iterable[MfeRecord]) -> list[MfeRecord]:
    return [r for r in records if not r.empty]


def _fmt(x: float) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(x)


def write_csv(records: Iterable[MfeRecord], path) -> None:
    """Write records using the database schema. Floats use ``repr`` so a
    read-back is bit-exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            i = r.input
            w.writerow(
                [
                    _fmt(float(i.h)),
                    _fmt(float(i.gamma)),
                    _fmt(float(i.ll)),
                    _fmt(float(i.ul)),
                    str(int(r.n_trim)),
                    _fmt(float(r.centroid_v)),
                    _fmt(float(r.centroid_psidot)),
                ]
            )


def _parse_float(text: str, col: str, line: int) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"line {line}: column {col!r} is not a number: {text!r}") from None


def ingest_csv(path) -> list[MfeRecord]:
    """Read and validate a database CSV.

    Raises
    ------
    ParseError
        Missing header columns or unparsable cells.
    InvariantViolation
        A row breaks an input or target invariant; the message names the line.
    """
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
        for line, row in enumerate(reader, start=2):
            vals = {c: _parse_float(row[c] or "", c, line) for c in CSV_COLUMNS}
            n = vals["n_trim"]
            if math.isnan(n) or n != int(n):
                raise ParseError(f"line {line}: n_trim must be an integer")
            rec = MfeRecord(
                InputVector(vals["h_ft"], vals["gamma_deg"], vals["ll_deg"], vals["ul_deg"]),
                int(n),
                vals["centroid_v_kt"],
                vals["centroid_psidot_dps"],
            )
            records.append(rec.validate(line))
    return records
