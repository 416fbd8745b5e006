#!/usr/bin/env python3
"""
Closed-form predictions and the harnesses that hold the solver against them.

Leading energy of the pinned functional:

    E_L = kappa^2 int_{a>0} a^2 fhat(sigma |B0| / a) + kappa^2/2 int_{a<=0} a^2,   sigma = H/kappa

plus its local version on a subdomain D, the |psi|^4 prediction and the
homogenized formulas for periodic pinning alpha(sqrt(kappa) x).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.integrate import simpson

from cellproblem import FhatTable, fhat_eval
from coefficients import DomainSpec, FieldSpec, PeriodicProfile, PinningSpec
from fields import ScalarField2D, _require_same_grid, _resolve_mask, count_boundary_squares
from glsolver import minimize_coupled, minimize_frozen
from sweep_util import sweep

logger = logging.getLogger(__name__)

SMALL_A = 1e-8
PERIOD_POINTS = 257


@dataclass(frozen=True, eq=False)
class LeadingEnergyReport:
    leading: float
    bulk_pos: float
    bulk_nonpos: float
    sigma: float
    pos_mask: np.ndarray = None
    nonpos_mask: np.ndarray = None

    def as_dict(self) -> Dict[str, float]:
        return {"leading": self.leading, "bulk_pos": self.bulk_pos, "bulk_nonpos": self.bulk_nonpos,
                "sigma": self.sigma}


def _density(a: np.ndarray, B0: np.ndarray, sigma: float, fhat: FhatTable) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise a^2 fhat(sigma |B0|/a) on {a > 0} and a^2/2 on {a <= 0}."""
    pos = a > 0
    tiny = pos & (a < SMALL_A)
    regular = pos & ~tiny
    dens_pos = np.zeros_like(a)
    if regular.any():
        dens_pos[regular] = a[regular] ** 2 * fhat_eval(fhat, sigma * np.abs(B0[regular]) / a[regular])
    dens_pos[tiny] = 0.5 * a[tiny] ** 2
    dens_neg = np.where(pos, 0.0, 0.5 * a ** 2)
    return dens_pos, dens_neg


def local_leading_energy(D_mask, a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float,
                         fhat: FhatTable) -> float:
    return _leading(D_mask, a, B0, kappa, H, fhat).leading


def _leading(D_mask, a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float,
             fhat: FhatTable) -> LeadingEnergyReport:
    _require_same_grid(a.grid, B0.grid)
    if not (kappa > 0 and H > 0):
        raise ValueError(f"kappa and H must be positive, got kappa={kappa}, H={H}")
    g = a.grid
    if D_mask is not None and not isinstance(D_mask, ScalarField2D):
        raw = np.asarray(D_mask, dtype=bool)
        if raw.shape == g.shape and np.any(raw & ~g.inside):
            raise ValueError("D must be contained in the domain")
    mask = _resolve_mask(g, D_mask)
    sigma = H / kappa
    dens_pos, dens_neg = _density(a.values, B0.values, sigma, fhat)
    w = kappa ** 2 * g.h ** 2
    bulk_pos = w * float(np.sum(dens_pos[mask]))
    bulk_nonpos = w * float(np.sum(dens_neg[mask]))
    return LeadingEnergyReport(bulk_pos + bulk_nonpos, bulk_pos, bulk_nonpos, sigma,
                               mask & (a.values > 0), mask & (a.values <= 0))


def leading_energy(a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float,
                   fhat: FhatTable) -> LeadingEnergyReport:
    report = _leading(None, a, B0, kappa, H, fhat)
    logger.debug("leading energy kappa=%.4g sigma=%.4g: %.8g", kappa, report.sigma, report.leading)
    return report


def leading_energy_upper(a: ScalarField2D, kappa: float) -> float:
    """kappa^2/2 int a^2: the leading energy with fhat replaced by 1/2."""
    g = a.grid
    return 0.5 * kappa ** 2 * g.h ** 2 * float(np.sum(a.values[g.inside] ** 2))


def psi4_prediction(D_mask, a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float,
                    fhat: FhatTable) -> float:
    """int_D |psi|^4 ~ int_{D, a>0} a^2 (1 - 2 fhat(sigma |B0|/a))."""
    _require_same_grid(a.grid, B0.grid)
    g = a.grid
    mask = _resolve_mask(g, D_mask) & (a.values > 0)
    if not mask.any():
        return 0.0
    av = a.values[mask]
    f = np.asarray(fhat_eval(fhat, (H / kappa) * np.abs(B0.values[mask]) / av))
    return float(g.h ** 2 * np.sum(av ** 2 * (1.0 - 2.0 * f)))


# --- solver comparison ----------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    kappa: float
    H: float
    E_min: float
    E_leading: float
    rel_dev: float
    converged: bool = True


@dataclass(frozen=True)
class EnergyComparison:
    rows: Tuple[ComparisonRow, ...]
    decreasing: bool

    def write_csv(self, path) -> Path:
        return write_rows_csv([asdict(r) for r in self.rows], path,
                              ["kappa", "H", "E_min", "E_leading", "rel_dev", "converged"])


def _compare_task(args) -> ComparisonRow:
    pinning, field_spec, domain, kappa, sigma, fhat, coupled, tol = args
    grid = domain.make_grid(domain.cells_for_kappa(kappa))
    a = pinning.sample(grid, kappa)
    B0 = field_spec.sample(grid)
    H = sigma * kappa
    solve = minimize_coupled if coupled else minimize_frozen
    state = solve(a, B0, kappa, H, tol=tol)
    lead = leading_energy(a, B0, kappa, H, fhat).leading
    return ComparisonRow(kappa, H, state.energy, lead, abs(state.energy - lead) / kappa ** 2, state.converged)


def compare_energy(pinning: PinningSpec, field_spec: FieldSpec, domain: DomainSpec, kappa_list: Sequence[float],
                   sigma: float, fhat: FhatTable, coupled: bool = False, tol: Optional[float] = None,
                   workers: int = 1, noise: float = 1e-3) -> EnergyComparison:
    """|E_min - E_L| / kappa^2 per kappa; `decreasing` allows `noise` slack between neighbours."""
    kappas = [float(k) for k in kappa_list]
    if any(k2 <= k1 for k1, k2 in zip(kappas, kappas[1:])):
        raise ValueError("kappa_list must be increasing")
    tasks = [(pinning, field_spec, domain, k, sigma, fhat, coupled, tol) for k in kappas]
    rows = tuple(sweep(_compare_task, tasks, workers, label="energy comparison"))
    devs = [r.rel_dev for r in rows]
    decreasing = all(d2 <= d1 + noise for d1, d2 in zip(devs, devs[1:]))
    for r in rows:
        logger.info("kappa=%.4g H=%.4g: E_min=%.8g E_L=%.8g rel_dev=%.4g",
                    r.kappa, r.H, r.E_min, r.E_leading, r.rel_dev)
    return EnergyComparison(rows, decreasing)


# --- periodic averages -----------------------------------------------------------------

def _period_nodes(T1: float, T2: float, points: int = PERIOD_POINTS):
    if not (T1 > 0 and T2 > 0):
        raise ValueError(f"periods must be positive, got {T1}, {T2}")
    t1 = np.linspace(0.0, T1, points)
    t2 = np.linspace(0.0, T2, points)
    return t1, t2


def periodic_average(phi: Callable, T1: float, T2: float, points: int = PERIOD_POINTS) -> float:
    """(1/T1T2) int over one period cell, Simpson in both directions."""
    t1, t2 = _period_nodes(T1, T2, points)
    G1, G2 = np.meshgrid(t1, t2, indexing="ij")
    vals = np.broadcast_to(np.asarray(phi(G1, G2), dtype=float), G1.shape)
    return float(simpson(simpson(vals, x=t2, axis=1), x=t1) / (T1 * T2))


def _period_weights(profile: PeriodicProfile, points: int = PERIOD_POINTS) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct values of alpha over one period with their Simpson weights (summing to 1)."""
    t1, t2 = _period_nodes(profile.period1, profile.period2, points)
    w1 = simpson(np.eye(points), x=t1, axis=1) / profile.period1
    w2 = simpson(np.eye(points), x=t2, axis=1) / profile.period2
    G1, G2 = np.meshgrid(t1, t2, indexing="ij")
    alpha = np.round(profile(G1, G2).ravel(), 12)
    weights = np.outer(w1, w2).ravel()
    values, inverse = np.unique(alpha, return_inverse=True)
    return values, np.bincount(inverse, weights=weights)


def periodic_average_field(profile: PeriodicProfile, local: Callable[[np.ndarray], np.ndarray],
                           points: int = PERIOD_POINTS, chunk: int = 32) -> np.ndarray:
    """x -> average over t of local(alpha(t)), where local maps alpha values to a (k, n) array."""
    values, weights = _period_weights(profile, points)
    out = None
    for start in range(0, values.size, chunk):
        part = weights[start:start + chunk] @ local(values[start:start + chunk])
        out = part if out is None else out + part
    return out


def homogenization_error(phi: Callable, T1: float, T2: float, box: Tuple[float, float, float, float],
                         M: float, per_period: int = 32) -> float:
    """|int_D phi(M x) dx - |D| phibar| on the rectangle D = box (x0, x1, y0, y1)."""
    x0, x1, y0, y1 = box
    nx = int(max(PERIOD_POINTS, per_period * M * (x1 - x0) / T1)) | 1
    ny = int(max(PERIOD_POINTS, per_period * M * (y1 - y0) / T2)) | 1
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = np.broadcast_to(np.asarray(phi(M * X, M * Y), dtype=float), X.shape)
    direct = float(simpson(simpson(vals, x=ys, axis=1), x=xs))
    return abs(direct - (x1 - x0) * (y1 - y0) * periodic_average(phi, T1, T2))


@dataclass(frozen=True)
class ConvergenceReport:
    M: Tuple[float, ...]
    errors: Tuple[float, ...]
    slope: float


def homogenization_convergence(phi: Callable, T1: float, T2: float, box: Tuple[float, float, float, float],
                               M_list: Sequence[float] = (8, 16, 32, 64)) -> ConvergenceReport:
    errors = [homogenization_error(phi, T1, T2, box, M) for M in M_list]
    slope = float(np.polyfit(np.log(np.asarray(M_list, dtype=float)), np.log(errors), 1)[0])
    logger.info("homogenization: errors %s, log-log slope %.3f", ", ".join(f"{e:.3e}" for e in errors), slope)
    return ConvergenceReport(tuple(float(m) for m in M_list), tuple(errors), slope)


# --- homogenized leading energy --------------------------------------------------------

EXAMPLES = ("kappa-independent", "oscillating", "shifted-periodic")


@dataclass(frozen=True)
class HomogenizedResult:
    example: str
    homogenized: float
    direct: float
    kappa: float
    lower_bound: float = float("nan")
    disk: Optional[Tuple[float, float, float]] = None

    @property
    def rel_gap(self) -> float:
        return abs(self.homogenized - self.direct) / max(abs(self.direct), 1e-300)


def _oscillation_cells(domain: DomainSpec, pinning: PinningSpec, kappa: float, per_period: int = 16) -> int:
    prof = pinning.profile
    period = min(prof.period1, prof.period2) / math.sqrt(kappa)
    return max(domain.cells, int(math.ceil(per_period * domain.size / period)))


def find_disk(mask: np.ndarray, h: float) -> Tuple[int, int, float]:
    """Largest inscribed disk of a node mask: centre index and radius (distance transform)."""
    if not mask.any():
        return -1, -1, 0.0
    dist = ndimage.distance_transform_edt(np.pad(mask, 1))[1:-1, 1:-1]
    i, j = np.unravel_index(int(np.argmax(dist)), dist.shape)
    return int(i), int(j), float(max(dist[i, j] - 1.0, 0.0) * h)


def kappa_independent_lower_bound(a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float,
                                  fhat: FhatTable) -> Tuple[float, Optional[Tuple[float, float, float]]]:
    """kappa^2 pi r0^2 a0^2 fhat(rho0 sigma / sup a) on a disk inside {a > a0, |B0| > rho0}."""
    g = a.grid
    if a.sup() <= 0:
        return 0.0, None
    a0 = 0.5 * a.sup()
    rho0 = 0.5 * float(np.abs(B0.values[g.inside]).max())
    mask = g.inside & (a.values > a0) & (np.abs(B0.values) > rho0)
    i, j, r0 = find_disk(mask, g.h)
    if r0 <= 0:
        return 0.0, None
    bound = kappa ** 2 * math.pi * r0 ** 2 * a0 ** 2 * fhat_eval(fhat, rho0 * (H / kappa) / a.sup())
    return float(bound), (float(g.x[i]), float(g.y[j]), r0)


def second_example_lower_bound(pinning: PinningSpec, a_kappa: ScalarField2D, B0: ScalarField2D, kappa: float,
                               H: float, fhat: FhatTable) -> float:
    """kappa^2 int_{a>0} a^2 fhat(sigma |B0| / sup a(., kappa)) for a(., kappa) = a + beta, beta >= 0."""
    g = a_kappa.grid
    base = pinning.base().sample(g, kappa).values
    mask = g.inside & (base > 0)
    if not mask.any():
        return 0.0
    f = np.asarray(fhat_eval(fhat, (H / kappa) * np.abs(B0.values[mask]) / a_kappa.sup()))
    return float(kappa ** 2 * g.h ** 2 * np.sum(base[mask] ** 2 * f))


def homogenized_leading(example: str, pinning: PinningSpec, field_spec: FieldSpec, domain: DomainSpec,
                        kappa: float, H: float, fhat: FhatTable, cells: Optional[int] = None) -> HomogenizedResult:
    """Homogenized leading energy next to the direct evaluation at this kappa."""
    if example not in EXAMPLES:
        raise ValueError(f"example: expected one of {EXAMPLES}, got {example!r}")
    expected = {"kappa-independent": False, "oscillating": True, "shifted-periodic": True}[example]
    if pinning.kappa_dependent != expected:
        raise ValueError(f"{example} example does not match {pinning.family} pinning")
    if example == "oscillating" and pinning.family != "periodic":
        raise ValueError("oscillating example needs periodic pinning")
    if example == "shifted-periodic" and pinning.family != "sum":
        raise ValueError("shifted-periodic example needs sum pinning")
    sigma = H / kappa
    if cells is None:
        cells = _oscillation_cells(domain, pinning, kappa) if expected else domain.cells
    grid = domain.make_grid(cells)
    a = pinning.sample(grid, kappa)
    B0 = field_spec.sample(grid)
    direct = leading_energy(a, B0, kappa, H, fhat).leading
    inside = grid.inside
    w = kappa ** 2 * grid.h ** 2
    s = sigma * np.abs(B0.values[inside])

    if example == "kappa-independent":
        bound, disk = kappa_independent_lower_bound(a, B0, kappa, H, fhat)
        return HomogenizedResult(example, direct, direct, kappa, bound, disk)

    prof = pinning.profile
    if example == "oscillating":
        def local(alpha):
            ap = np.clip(alpha, 0.0, None)[:, None]
            ratio = np.divide(s[None, :], ap, out=np.full((ap.size, s.size), np.inf), where=ap > 0)
            return np.where(ap > 0, ap ** 2 * np.asarray(fhat_eval(fhat, np.minimum(ratio, 2.0))), 0.0)

        phi_plus = periodic_average_field(prof, local)
        phi_minus = periodic_average(lambda t1, t2: np.clip(-prof(t1, t2), 0.0, None) ** 2,
                                     prof.period1, prof.period2)
        value = w * float(np.sum(phi_plus)) + 0.5 * kappa ** 2 * domain.area * phi_minus
        return HomogenizedResult(example, value, direct, kappa)

    base = pinning.base().sample(grid, kappa).values[inside]
    if np.any(base < 0):
        raise ValueError("shifted-periodic example needs a >= 0")

    def local(alpha):
        tot = base[None, :] + alpha[:, None]
        pos = tot > 0
        ratio = np.divide(s[None, :], tot, out=np.full(tot.shape, np.inf), where=pos)
        return np.where(pos, tot ** 2 * np.asarray(fhat_eval(fhat, np.minimum(ratio, 2.0))), 0.5 * tot ** 2)

    value = w * float(np.sum(periodic_average_field(prof, local)))
    bound = second_example_lower_bound(pinning, a, B0, kappa, H, fhat)
    return HomogenizedResult(example, value, direct, kappa, bound)


# --- interface squares -----------------------------------------------------------------

def interface_length_estimate(a: ScalarField2D, ell_list: Sequence[float]) -> List[Dict[str, float]]:
    """Number of lattice squares meeting both signs of a, times ell, per side length."""
    rows = []
    for ell in ell_list:
        n = count_boundary_squares(a, ell)
        rows.append({"ell": float(ell), "count": n, "length": n * float(ell)})
    return rows


# --- reports ---------------------------------------------------------------------------

def write_rows_csv(rows: Sequence[Dict], path, columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c, "")) for c in columns))
    path.write_text("\n".join(lines) + "\n")
    return path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_report_json(report, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = report if isinstance(report, dict) else asdict(report)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")
    return path
