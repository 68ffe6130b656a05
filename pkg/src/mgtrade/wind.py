"""Turbine power curve: wind speed to available output fraction.

The fraction rises with the cube of the speed between cut-in and rated
speed, holds at 1 up to cut-out, and is 0 outside the operating range.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PowerCurve:
    """Cut-in, rated and cut-out speeds in m/s."""

    cut_in: float = 3.0
    rated: float = 13.0
    cut_out: float = 25.0

    def __post_init__(self) -> None:
        if not (0 <= self.cut_in < self.rated < self.cut_out):
            raise ValueError(
                f"power curve speeds must satisfy 0 <= cut_in < rated < cut_out, "
                f"got ({self.cut_in}, {self.rated}, {self.cut_out})"
            )


def power_fraction(speed_ms, curve: PowerCurve = PowerCurve()) -> np.ndarray | float:
    """Available output fraction for wind speed(s) in m/s.

    Piecewise: 0 below cut-in and at or above cut-out, cubic interpolation
    (v^3 - cut_in^3) / (rated^3 - cut_in^3) between cut-in and rated, 1 on
    [rated, cut_out).  Vectorized; scalar in gives scalar out.
    """
    v = np.asarray(speed_ms, dtype=np.float64)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("wind speeds must be finite and >= 0")
    lo3 = curve.cut_in ** 3
    span = curve.rated ** 3 - lo3
    frac = np.clip((v ** 3 - lo3) / span, 0.0, 1.0)
    frac[v >= curve.cut_out] = 0.0
    return float(frac[0]) if scalar else frac


def ingest_speeds(
    path: str | Path,
    column: str,
    slots: int,
    curve: PowerCurve = PowerCurve(),
) -> np.ndarray:
    """Read one speed column from a CSV file and return power fractions for
    the first `slots` rows.  Extra rows are ignored; fewer rows, a missing
    column, or a non-numeric cell raise ValueError."""
    path = Path(path)
    fractions: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValueError(f"{path}: missing column {column!r}")
        for row_no, row in enumerate(reader):
            if len(fractions) == slots:
                break
            cell = row[column]
            try:
                speed = float(cell)
            except (TypeError, ValueError):
                raise ValueError(
                    f"{path}: non-numeric value {cell!r} in column {column!r}, row {row_no + 2}"
                ) from None
            fractions.append(float(power_fraction(speed, curve)))
    if len(fractions) < slots:
        raise ValueError(f"{path}: needed {slots} rows, found {len(fractions)}")
    return np.asarray(fractions)
