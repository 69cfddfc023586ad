"""Gridded one-dimensional functions shared by the primal and dual solvers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

KINDS = ("primal_M", "primal_unbounded", "dual_game", "dual_transform")


@dataclass(frozen=True)
class Grid:
    lower: float
    upper: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 points, got {self.n}")
        if not self.upper > self.lower:
            raise ValueError("grid upper must exceed lower")

    @property
    def h(self) -> float:
        return (self.upper - self.lower) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.n)

    @classmethod
    def with_spacing(cls, lower: float, upper: float, h: float) -> "Grid":
        n = int(round((upper - lower) / h)) + 1
        return cls(lower, upper, n)


def first_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Central differences inside, second-order one-sided stencils at the ends."""
    return np.gradient(values, h, edge_order=2)


def second_derivative(values: np.ndarray, h: float) -> np.ndarray:
    d2 = np.empty_like(values)
    d2[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / h ** 2
    # linear extrapolation of the interior estimates
    d2[0] = 2.0 * d2[1] - d2[2]
    d2[-1] = 2.0 * d2[-2] - d2[-3]
    return d2


@dataclass(frozen=True, eq=False)
class ValueCurve:
    grid: Grid
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        for name in ("values", "d1", "d2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.grid.n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({self.grid.n},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_values(cls, grid: Grid, values, kind: str, **meta) -> "ValueCurve":
        values = np.asarray(values, dtype=float)
        return cls(grid, values, first_derivative(values, grid.h),
                   second_derivative(values, grid.h), kind, dict(meta))

    @property
    def z(self) -> np.ndarray:
        return self.grid.points

    def _check_domain(self, x):
        x = np.asarray(x, dtype=float)
        tol = 1e-12 * max(1.0, abs(self.grid.upper))
        if np.any(x < self.grid.lower - tol) or np.any(x > self.grid.upper + tol):
            raise ValueError(
                f"query outside curve domain [{self.grid.lower}, {self.grid.upper}]; "
                "extrapolation refused")
        return np.clip(x, self.grid.lower, self.grid.upper)

    def __call__(self, x):
        """Monotone cubic interpolation of the values."""
        return self._pchip(self._check_domain(x))

    @cached_property
    def _pchip(self):
        return PchipInterpolator(self.z, self.values, extrapolate=False)

    def slope(self, x):
        """First derivative, interpolated linearly from the stored estimates."""
        return np.interp(self._check_domain(x), self.z, self.d1)

    def curvature(self, x):
        return np.interp(self._check_domain(x), self.z, self.d2)


@dataclass(frozen=True, eq=False)
class PolicyCurve:
    grid: Grid
    pi: np.ndarray

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < self.grid.lower) or np.any(z > self.grid.upper):
            raise ValueError("policy evaluated outside its grid")
        return np.interp(z, self.grid.points, self.pi)


def write_csv(path: str | Path, header: list[str], columns: list[np.ndarray]) -> None:
    """Write columns with full double precision (repr round-trips exactly)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])


def read_csv(path: str | Path, expected_header: list[str]) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header != expected_header:
            raise ValueError(f"{path}: header {header} != {expected_header}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    return {name: data[:, i] for i, name in enumerate(header)}
