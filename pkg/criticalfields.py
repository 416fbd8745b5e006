#!/usr/bin/env python3
"""
Leading-order critical fields and their empirical counterparts.

Two regimes:
- B0 does not vanish (Gamma empty): Lambda_1 and H_C3 ~ kappa max(sup a/|B0|, sup_bdry a/(Theta0 |B0|)).
- B0 vanishes on a curve Gamma: Lambda-hat_1, alpha_1 and H_C3 ~ kappa^2 (...)^{3/2} built from
  lambda0 inside and the half-plane values lambda(theta) where Gamma meets the boundary.

Empirical side: bisection on the sign of mu_1(kappa, H) and breakdown scans of the frozen solver.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from skimage.measure import find_contours

from fields import ComplexField2D, Grid2D, ScalarField2D, _require_same_grid
from gauge import PotentialBundle, vector_potential_from_field
from glsolver import GLProblem, minimize_frozen
from spectral import HalfPlaneTable, SpectralCache, mu1

logger = logging.getLogger(__name__)

CASES = ("nonvanishing", "vanishing")
DEGENERATE = 1e-6


# --- Gamma -----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GammaData:
    points: np.ndarray
    grad_norm: np.ndarray
    crossings: np.ndarray
    crossing_grad_norm: np.ndarray
    theta: np.ndarray
    normals: np.ndarray
    h: float
    b_residual: float = 0.0
    skipped_corners: int = 0
    violation: bool = False

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0

    @property
    def has_crossings(self) -> bool:
        return self.crossings.shape[0] > 0

    @classmethod
    def none(cls, h: float) -> "GammaData":
        z2, z1 = np.zeros((0, 2)), np.zeros(0)
        return cls(z2, z1, z2, z1, z1, z2, h)


def _interpolator(grid: Grid2D, values: np.ndarray) -> RegularGridInterpolator:
    return RegularGridInterpolator((grid.x, grid.y), values, method="linear", bounds_error=False, fill_value=None)


def sample_at(f: ScalarField2D, points: np.ndarray) -> np.ndarray:
    if points.shape[0] == 0:
        return np.zeros(0)
    return _interpolator(f.grid, f.values)(points)


def _gradient(B0: ScalarField2D) -> Tuple[np.ndarray, np.ndarray]:
    gx, gy = np.gradient(B0.values, B0.grid.h)
    return gx, gy


def gamma_extract(B0: ScalarField2D) -> GammaData:
    """Zero set of B0 by marching squares, with |grad B0| along it and the boundary crossings."""
    g = B0.grid
    mask = None if g.inside.all() else g.inside
    # contours come back in fractional (i, j) index coordinates
    lines = [np.column_stack([np.interp(c[:, 0], np.arange(g.nx), g.x), np.interp(c[:, 1], np.arange(g.ny), g.y)])
             for c in find_contours(B0.values, 0.0, mask=mask) if len(c) > 0]
    if not lines:
        logger.debug("B0 has no zero line on this grid")
        return GammaData.none(g.h)

    gx, gy = _gradient(B0)
    ix, iy = _interpolator(g, gx), _interpolator(g, gy)
    points = np.vstack(lines)
    grad = np.stack([ix(points), iy(points)], axis=1)
    grad_norm = np.linalg.norm(grad, axis=1)
    b_residual = float(np.abs(sample_at(B0, points)).max())

    idx, nrm, corner = g.boundary_nodes
    centres = np.stack([g.x[idx[:, 0]], g.y[idx[:, 1]]], axis=1)
    rectangular = bool(g.inside.all())
    cross, cross_g, thetas, normals = [], [], [], []
    skipped = 0
    for ln in lines:
        if len(ln) < 2 or np.allclose(ln[0], ln[-1]):
            continue
        for end in (ln[0], ln[-1]):
            k = int(np.argmin(np.sum((centres - end) ** 2, axis=1)))
            if rectangular and corner[k]:
                skipped += 1
                continue
            nu = nrm[k]
            if not np.any(nu):
                continue
            gv = np.array([ix(end[None])[0], iy(end[None])[0]])
            gn = float(np.linalg.norm(gv))
            cos = float(np.clip(-gv @ nu / max(gn, 1e-300), -1.0, 1.0))
            cross.append(end + 0.5 * g.h * nu)
            cross_g.append(gn)
            thetas.append(math.acos(cos))
            normals.append(nu)
    if skipped:
        logger.warning("Gamma: %d crossing(s) at corners of the square skipped", skipped)

    scale = max(float(np.hypot(gx, gy)[g.inside].max()), 1e-300)
    theta = np.asarray(thetas)
    violation = bool(grad_norm.min() < DEGENERATE * scale
                     or (theta.size and np.any(np.minimum(theta, math.pi - theta) < DEGENERATE)))
    if violation:
        logger.warning("B0 is degenerate on its zero set: |grad B0| vanishes or Gamma is tangent to the boundary")
    logger.info("Gamma: %d point(s) on %d line(s), %d boundary crossing(s)", len(points), len(lines), len(cross))
    return GammaData(points, grad_norm,
                     np.asarray(cross).reshape(-1, 2), np.asarray(cross_g), theta,
                     np.asarray(normals).reshape(-1, 2), g.h, b_residual, skipped, violation)


# --- leading-order constants -----------------------------------------------------------

def _boundary_values(f: ScalarField2D) -> np.ndarray:
    """f on boundary nodes, square corners excluded."""
    g = f.grid
    idx, _, corner = g.boundary_nodes
    if g.inside.all():
        idx = idx[~corner]
    return f.values[idx[:, 0], idx[:, 1]]


def _check_nonvanishing(B0: ScalarField2D) -> np.ndarray:
    b = B0.values[B0.grid.inside]
    if np.any(b == 0) or (b.min() < 0 < b.max()):
        raise ValueError("B0 vanishes in the domain: use the vanishing-field formulas")
    return np.abs(B0.values)


def lambda1(B0: ScalarField2D, a: ScalarField2D, sigma: float, theta0: float) -> float:
    """min(inf (sigma |B0| - a), inf_bdry (Theta0 sigma |B0| - a))."""
    _require_same_grid(a.grid, B0.grid)
    absB = _check_nonvanishing(B0)
    g = a.grid
    bulk = float((sigma * absB - a.values)[g.inside].min())
    edge = ScalarField2D(g, theta0 * sigma * absB - a.values)
    return min(bulk, float(_boundary_values(edge).min()))


def _require_gamma(gamma: GammaData):
    if gamma.empty:
        raise ValueError("Gamma is empty: use the nonvanishing-field formulas")


def lambda1_hat(a: ScalarField2D, sigma_hat: float, gamma: GammaData, lam0: float,
                table: HalfPlaneTable) -> float:
    """min over Gamma of lambda0 (s |grad B0|)^{2/3} - a and over crossings of lambda(theta) (...)^{2/3} - a."""
    _require_gamma(gamma)
    inner = lam0 * (sigma_hat * gamma.grad_norm) ** (2.0 / 3.0) - sample_at(a, gamma.points)
    value = float(inner.min())
    if gamma.has_crossings:
        lam = np.asarray(table(gamma.theta))
        edge = lam * (sigma_hat * gamma.crossing_grad_norm) ** (2.0 / 3.0) - sample_at(a, gamma.crossings)
        value = min(value, float(edge.min()))
    return value


def alpha1(gamma: GammaData, lam0: float, table: HalfPlaneTable) -> float:
    _require_gamma(gamma)
    value = lam0 ** 1.5 * float(gamma.grad_norm.min())
    if gamma.has_crossings:
        value = min(value, float(np.min(np.asarray(table(gamma.theta)) ** 1.5 * gamma.crossing_grad_norm)))
    return value


@dataclass(frozen=True)
class HC3Formula:
    value: float
    case: str
    error_scale: float
    boundary_attains: bool = False
    flags: Tuple[str, ...] = ()


def hc3_formula(a: ScalarField2D, B0: ScalarField2D, kappa: float, gamma: Optional[GammaData] = None,
                theta0: Optional[float] = None, lam0: Optional[float] = None,
                table: Optional[HalfPlaneTable] = None) -> HC3Formula:
    """Leading term of H_C3; the error term is reported as a scale, never added."""
    _require_same_grid(a.grid, B0.grid)
    g = a.grid
    if not np.any(a.values[g.inside] > 0):
        logger.warning("a <= 0 everywhere: no superconductivity at any field")
        return HC3Formula(0.0, "vanishing" if gamma is not None and not gamma.empty else "nonvanishing",
                          0.0, False, ("normal",))
    ap = np.clip(a.values, 0.0, None)
    if gamma is None or gamma.empty:
        if theta0 is None:
            raise ValueError("theta0 is required when B0 does not vanish")
        absB = _check_nonvanishing(B0)
        bulk = float((ap / absB)[g.inside].max())
        edge = float(_boundary_values(ScalarField2D(g, ap / (theta0 * absB))).max())
        return HC3Formula(kappa * max(bulk, edge), "nonvanishing", math.sqrt(kappa), edge >= bulk)

    if lam0 is None or table is None:
        raise ValueError("lam0 and the half-plane table are required when B0 vanishes")
    flags = ("assumption-violated",) if gamma.violation else ()
    a_gamma = np.clip(sample_at(a, gamma.points), 0.0, None)
    bulk = float(np.max(a_gamma ** 1.5 / (lam0 ** 1.5 * gamma.grad_norm)))
    edge = 0.0
    if gamma.has_crossings:
        a_cross = np.clip(sample_at(a, gamma.crossings), 0.0, None)
        lam = np.asarray(table(gamma.theta))
        edge = float(np.max(a_cross ** 1.5 / (lam ** 1.5 * gamma.crossing_grad_norm)))
    return HC3Formula(kappa ** 2 * max(bulk, edge), "vanishing", kappa ** 1.75, edge >= bulk, flags)


# --- empirical fields ------------------------------------------------------------------

@dataclass(frozen=True)
class Bracket:
    H_lo: float
    H_hi: float
    mu_lo: float
    mu_hi: float
    evaluations: int

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.H_lo + self.H_hi)


def hc3_empirical_local(kappa: float, a: ScalarField2D, B0: ScalarField2D, bracket: Tuple[float, float],
                        tol: float = 0.01, potential: Optional[PotentialBundle] = None,
                        inner: str = "cg") -> Bracket:
    """Bisection on the sign of mu_1(kappa, H) until the bracket is narrower than tol * kappa."""
    H_lo, H_hi = (float(v) for v in bracket)
    if not 0 < H_lo < H_hi:
        raise ValueError(f"bracket must satisfy 0 < H_lo < H_hi, got {bracket}")
    potential = potential or vector_potential_from_field(B0)
    count = 0

    def mu(H: float) -> float:
        nonlocal count
        count += 1
        return mu1(kappa, H, a, B0, tol=1e-8, potential=potential, inner=inner).value

    m_lo, m_hi = mu(H_lo), mu(H_hi)
    if not (m_lo < 0 < m_hi):
        if m_lo < 0 and m_hi < 0:
            H_hi *= 2.0
            m_hi = mu(H_hi)
        elif m_lo >= 0 and m_hi >= 0:
            H_lo *= 0.5
            m_lo = mu(H_lo)
        if not (m_lo < 0 < m_hi):
            raise ValueError(f"mu_1 has no sign change on [{H_lo:.4g}, {H_hi:.4g}] "
                             f"(mu = {m_lo:.4g}, {m_hi:.4g})")
        logger.warning("H_C3 bracket expanded to [%.4g, %.4g]", H_lo, H_hi)
    while H_hi - H_lo > tol * kappa:
        H_mid = 0.5 * (H_lo + H_hi)
        m_mid = mu(H_mid)
        logger.debug("bisection H=%.6g mu=%.6g", H_mid, m_mid)
        if m_mid < 0:
            H_lo, m_lo = H_mid, m_mid
        else:
            H_hi, m_hi = H_mid, m_mid
    logger.info("H_C3 bracket kappa=%.4g: [%.6g, %.6g] after %d eigensolves", kappa, H_lo, H_hi, count)
    return Bracket(H_lo, H_hi, m_lo, m_hi, count)


@dataclass(frozen=True)
class BreakdownResult:
    H_break: float
    found: bool
    history: Tuple[Tuple[float, float], ...] = ()

    def ratio(self, kappa: float, power: float = 1.0) -> float:
        return self.H_break / kappa ** power


def breakdown_scan(kappa: float, a: ScalarField2D, B0: ScalarField2D, H_grid: Sequence[float],
                   tol: float = 1e-3, solver_tol: Optional[float] = None,
                   potential: Optional[PotentialBundle] = None, seed: int = 0) -> BreakdownResult:
    """First H on the grid whose frozen minimizer has ||psi||_2 <= tol."""
    H_grid = [float(H) for H in H_grid]
    if not H_grid or any(h2 <= h1 for h1, h2 in zip(H_grid, H_grid[1:])):
        raise ValueError("H_grid must be nonempty and increasing")
    potential = potential or vector_potential_from_field(B0)
    history: List[Tuple[float, float]] = []
    for H in H_grid:
        state = minimize_frozen(a, B0, kappa, H, tol=solver_tol, potential=potential, seed=seed)
        norm = state.l2_norm()
        history.append((H, norm))
        logger.debug("breakdown kappa=%.4g H=%.4g ||psi||=%.4e", kappa, H, norm)
        if norm <= tol:
            logger.info("breakdown kappa=%.4g at H=%.6g", kappa, H)
            return BreakdownResult(H, True, tuple(history))
    logger.warning("breakdown kappa=%.4g: no normal minimizer up to H=%.6g", kappa, H_grid[-1])
    return BreakdownResult(H_grid[-1], False, tuple(history))


@dataclass(frozen=True)
class Membership:
    kappa: float
    H: float
    mu1: float
    energy: float
    normal_energy: float

    @property
    def mu_negative(self) -> bool:
        return self.mu1 < 0

    @property
    def nonnormal(self) -> bool:
        return self.energy < self.normal_energy - 1e-10 * max(1.0, abs(self.normal_energy))

    @property
    def consistent(self) -> bool:
        """mu_1 < 0 must imply a minimizer strictly below the normal state."""
        return self.nonnormal or not self.mu_negative


def critical_set_membership(kappa: float, H: float, a: ScalarField2D, B0: ScalarField2D,
                            potential: Optional[PotentialBundle] = None, tol: Optional[float] = None,
                            seed: int = 0) -> Membership:
    potential = potential or vector_potential_from_field(B0)
    problem = GLProblem(a, B0, kappa, H, potential)
    mu = mu1(kappa, H, a, B0, potential=potential).value
    state = minimize_frozen(a, B0, kappa, H, tol=tol, seed=seed, problem=problem)
    normal = problem.total_energy(ComplexField2D.zeros(a.grid).values, None)
    m = Membership(kappa, H, mu, state.energy, normal)
    if not m.consistent:
        logger.warning("kappa=%.4g H=%.4g: mu_1 < 0 but the frozen minimizer is normal", kappa, H)
    return m


# --- reports ---------------------------------------------------------------------------

@dataclass
class CriticalFieldReport:
    formula_value: float
    empirical_bracket: Tuple[float, float]
    kappa: float
    case: str
    error_scale: float
    boundary_attains: bool = False
    flags: List[str] = field(default_factory=list)
    cache_entries: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"case: expected one of {CASES}, got {self.case!r}")
        lo, hi = self.empirical_bracket
        if not lo < hi:
            raise ValueError(f"empirical bracket must satisfy H_lo < H_hi, got {self.empirical_bracket}")

    def as_dict(self) -> Dict:
        d = asdict(self)
        d["empirical_bracket"] = list(self.empirical_bracket)
        return d

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")
        return path


def hc3_report(kappa: float, a: ScalarField2D, B0: ScalarField2D, cache: SpectralCache,
               tol: float = 0.01, bracket: Optional[Tuple[float, float]] = None,
               inner: str = "cg") -> CriticalFieldReport:
    """Formula value next to the mu_1 bisection bracket started around it."""
    gamma = gamma_extract(B0)
    if gamma.empty:
        formula = hc3_formula(a, B0, kappa, theta0=cache.theta0().value)
    else:
        formula = hc3_formula(a, B0, kappa, gamma, lam0=cache.lambda0().value, table=cache.halfplane_table())
    if "normal" in formula.flags:
        raise ValueError("a <= 0 everywhere: nothing to bracket")
    if bracket is None:
        bracket = (0.5 * formula.value, 1.5 * formula.value)
    found = hc3_empirical_local(kappa, a, B0, bracket, tol, inner=inner)
    return CriticalFieldReport(formula.value, (found.H_lo, found.H_hi), kappa, formula.case, formula.error_scale,
                               formula.boundary_attains, list(formula.flags), cache.entries())
