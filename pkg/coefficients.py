#!/usr/bin/env python3
"""
Declarative pinning terms a(x, kappa) and applied fields B0(x).

Families:
- pinning: constant, linear, radial (Gaussian bump over a floor), periodic
  alpha(sqrt(kappa) x), sum a(x) + alpha(sqrt(kappa) x), tabulated CSV.
- field: constant, linear, radial ring scale*(|x-c|^2 - r^2), tabulated CSV.

Tabulated inputs are CSV files with x,y,value rows on a regular grid and are
bilinearly interpolated (linear extrapolation past the table edge).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from fields import Grid2D, ScalarField2D

PINNING_FAMILIES = ("constant", "linear", "radial", "periodic", "sum", "tabulated")
FIELD_FAMILIES = ("constant", "linear", "radial", "tabulated")

# family -> keys that must be present
_PINNING_REQUIRED = {
    "constant": ("value",),
    "linear": ("value", "gradient"),
    "radial": ("value", "radius", "center"),
    "periodic": ("mean",),
    "sum": ("value", "mean"),
    "tabulated": ("path",),
}
_FIELD_REQUIRED = {
    "constant": ("value",),
    "linear": ("value", "gradient"),
    "radial": ("radius", "center"),
    "tabulated": ("path",),
}


@dataclass(frozen=True)
class DomainSpec:
    shape: str = "square"
    size: float = 1.0
    center: Tuple[float, float] = (0.5, 0.5)
    cells: int = 64

    def __post_init__(self):
        if self.shape not in ("square", "disk"):
            raise ValueError(f"shape: expected square or disk, got {self.shape!r}")
        if not self.size > 0:
            raise ValueError(f"size: must be positive, got {self.size}")

    @property
    def area(self) -> float:
        if self.shape == "square":
            return self.size ** 2
        return math.pi * (0.5 * self.size) ** 2

    def make_grid(self, cells: int = None) -> Grid2D:
        n = int(cells or self.cells)
        if self.shape == "square":
            origin = (self.center[0] - 0.5 * self.size, self.center[1] - 0.5 * self.size)
            return Grid2D.square(n, side=self.size, origin=origin)
        return Grid2D.disk(n, radius=0.5 * self.size, center=self.center)

    def cells_for_kappa(self, kappa: float, per_kappa: float = 4.0, minimum: int = 32) -> int:
        """Resolve the coherence length 1/kappa with `per_kappa` cells."""
        return max(minimum, int(math.ceil(per_kappa * kappa * self.size)))


@dataclass(frozen=True)
class PeriodicProfile:
    """alpha(t) = mean + amp1 sin(2 pi t1/period1) + amp2 sin(2 pi t2/period2)."""
    mean: float
    amp1: float = 0.0
    amp2: float = 0.0
    period1: float = 1.0
    period2: float = 1.0

    def __call__(self, t1, t2):
        return (self.mean
                + self.amp1 * np.sin(2.0 * np.pi * np.asarray(t1) / self.period1)
                + self.amp2 * np.sin(2.0 * np.pi * np.asarray(t2) / self.period2))

    @property
    def minimum(self) -> float:
        return self.mean - abs(self.amp1) - abs(self.amp2)

    @property
    def maximum(self) -> float:
        return self.mean + abs(self.amp1) + abs(self.amp2)


@lru_cache(maxsize=16)
def _table_interpolator(path: str) -> RegularGridInterpolator:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    if xs.size * ys.size != data.shape[0]:
        raise ValueError(f"{path}: rows do not form a regular x,y grid")
    values = np.full((xs.size, ys.size), np.nan)
    values[np.searchsorted(xs, data[:, 0]), np.searchsorted(ys, data[:, 1])] = data[:, 2]
    return RegularGridInterpolator((xs, ys), values, method="linear", bounds_error=False, fill_value=None)


def _check(family: str, params: Mapping, families, required: Dict[str, tuple]):
    if family not in families:
        raise ValueError(f"family: expected one of {families}, got {family!r}")
    missing = [k for k in required[family] if k not in params]
    if missing:
        raise ValueError(f"{family}: missing parameter(s) {', '.join(missing)}")
    if family == "tabulated" and not Path(params["path"]).exists():
        raise ValueError(f"path: file {params['path']} does not exist")


def _vec(params: Mapping, key: str, default=(0.0, 0.0)) -> Tuple[float, float]:
    v = params.get(key, default)
    return float(v[0]), float(v[1])


@dataclass(frozen=True)
class PinningSpec:
    family: str = "constant"
    params: Dict = field(default_factory=lambda: {"value": 1.0})

    def __post_init__(self):
        _check(self.family, self.params, PINNING_FAMILIES, _PINNING_REQUIRED)

    @property
    def kappa_dependent(self) -> bool:
        return self.family in ("periodic", "sum")

    @property
    def profile(self) -> PeriodicProfile:
        if not self.kappa_dependent:
            raise ValueError(f"{self.family} pinning has no periodic profile")
        p = self.params
        return PeriodicProfile(float(p["mean"]), float(p.get("amp1", 0.0)), float(p.get("amp2", 0.0)),
                               float(p.get("period1", 1.0)), float(p.get("period2", 1.0)))

    def base(self) -> "PinningSpec":
        """The kappa-independent part a(x) of a sum pinning (zero for periodic)."""
        if self.family == "sum":
            return PinningSpec("linear", {"value": self.params["value"],
                                          "gradient": self.params.get("gradient", (0.0, 0.0))})
        if self.family == "periodic":
            return PinningSpec("constant", {"value": 0.0})
        return self

    def evaluate(self, x, y, kappa: float = 1.0):
        p = self.params
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family == "constant":
            return np.full(np.broadcast(x, y).shape, float(p["value"]))
        if self.family == "linear":
            g1, g2 = _vec(p, "gradient")
            return float(p["value"]) + g1 * x + g2 * y
        if self.family == "radial":
            c1, c2 = _vec(p, "center")
            floor = float(p.get("floor", 0.0))
            r2 = ((x - c1) ** 2 + (y - c2) ** 2) / float(p["radius"]) ** 2
            return floor + (float(p["value"]) - floor) * np.exp(-r2)
        if self.family == "periodic":
            s = math.sqrt(kappa)
            return self.profile(s * x, s * y)
        if self.family == "sum":
            s = math.sqrt(kappa)
            return self.base().evaluate(x, y) + self.profile(s * x, s * y)
        return _table_interpolator(str(p["path"]))(np.stack([x, y], axis=-1))

    def sample(self, grid: Grid2D, kappa: float = 1.0) -> ScalarField2D:
        X, Y = grid.mesh()
        return ScalarField2D(grid, self.evaluate(X, Y, kappa))


@dataclass(frozen=True)
class FieldSpec:
    family: str = "constant"
    params: Dict = field(default_factory=lambda: {"value": 1.0})

    def __post_init__(self):
        _check(self.family, self.params, FIELD_FAMILIES, _FIELD_REQUIRED)

    def evaluate(self, x, y):
        p = self.params
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family == "constant":
            return np.full(np.broadcast(x, y).shape, float(p["value"]))
        if self.family == "linear":
            g1, g2 = _vec(p, "gradient")
            return float(p["value"]) + g1 * x + g2 * y
        if self.family == "radial":
            c1, c2 = _vec(p, "center")
            return float(p.get("scale", 1.0)) * ((x - c1) ** 2 + (y - c2) ** 2 - float(p["radius"]) ** 2)
        return _table_interpolator(str(p["path"]))(np.stack([x, y], axis=-1))

    def sample(self, grid: Grid2D) -> ScalarField2D:
        X, Y = grid.mesh()
        return ScalarField2D(grid, self.evaluate(X, Y))


def sample_problem(domain: DomainSpec, pinning: PinningSpec, field_spec: FieldSpec,
                   kappa: float, cells: int = None) -> Tuple[Grid2D, ScalarField2D, ScalarField2D]:
    grid = domain.make_grid(cells)
    return grid, pinning.sample(grid, kappa), field_spec.sample(grid)
