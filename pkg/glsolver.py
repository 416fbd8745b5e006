#!/usr/bin/env python3
"""
Minimizers, residuals and a priori diagnostics for the pinned functional

    E(psi, A) = int |(grad - i kappa H A) psi|^2 + kappa^2/2 (a - |psi|^2)^2
                + (kappa H)^2 int |curl A - B0|^2

on a Grid2D with Neumann-natural boundary conditions.

Notes:
- Frozen minimization keeps A = F (curl F = B0, F.nu = 0) and descends in psi
  with Barzilai-Borwein steps, Armijo backtracking and radial truncation
  |psi| <= sqrt(max(sup a, 0)); every accepted step lowers the energy.
- Coupled minimization writes A = F + grad_perp(w) with w = 0 off the plaquette
  corners and alternates psi sweeps with a Picard update of w from the
  discrete Ampere equation (two Poisson solves).
- The test configuration tiles admissible squares with rescaled Dirichlet cell
  minimizers, twisted into the gauge of F, and zero elsewhere.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from cellproblem import CellCache, FhatTable, fhat_eval
from fields import (
    ComplexField2D, Grid2D, LinkField2D, ScalarField2D, _require_same_grid, box_counts,
    kinetic_energy, kinetic_energy_and_laplacian, link_current, read_field_binary, read_links_binary,
    vertex_average, write_field_binary, write_links_binary,
)
from gauge import (
    PoissonSolver, PotentialBundle, curl, links_to_stream, local_gauge_phase, stream_to_links,
    vector_potential_from_field,
)

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
NORMAL_THRESHOLD = 1e-10


# --- state --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GLState:
    psi: ComplexField2D
    A: LinkField2D
    kappa: float
    H: float
    energy: float
    residuals: Dict[str, float] = field(default_factory=dict)
    w: Optional[np.ndarray] = None
    converged: bool = True
    iterations: int = 0
    seed: Optional[int] = None
    trace: Tuple[float, ...] = ()

    @property
    def grid(self) -> Grid2D:
        return self.psi.grid

    def l2_norm(self) -> float:
        return math.sqrt(self.grid.h ** 2 * float(np.sum(np.abs(self.psi.values) ** 2)))

    def is_normal(self, threshold: float = NORMAL_THRESHOLD) -> bool:
        return float(np.abs(self.psi.values).max()) <= threshold

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_field_binary(self.psi, directory / "psi.bin")
        write_links_binary(self.A, directory / "A.bin")
        if self.w is not None:
            write_field_binary(ScalarField2D(self.grid.vertex_grid(), self.w), directory / "w.bin")
        meta = {
            "kappa": self.kappa, "H": self.H, "energy": self.energy, "residuals": self.residuals,
            "converged": self.converged, "iterations": self.iterations, "seed": self.seed,
            "origin": list(self.grid.origin), "has_w": self.w is not None,
        }
        (directory / "state.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        write_trace_csv(self, directory / "trace.csv")
        return directory

    @classmethod
    def load(cls, directory, grid: Grid2D) -> "GLState":
        directory = Path(directory)
        meta = json.loads((directory / "state.json").read_text())
        psi = read_field_binary(directory / "psi.bin", grid)
        A = read_links_binary(directory / "A.bin", grid)
        w = None
        if meta.get("has_w"):
            w = np.array(read_field_binary(directory / "w.bin", grid.vertex_grid()).values)
        trace = ()
        if (directory / "trace.csv").exists():
            data = np.loadtxt(directory / "trace.csv", delimiter=",", skiprows=1, ndmin=2)
            trace = tuple(float(v) for v in data[:, 1]) if data.size else ()
        return cls(psi, A, meta["kappa"], meta["H"], meta["energy"], meta["residuals"], w,
                   meta["converged"], meta["iterations"], meta["seed"], trace)


def write_trace_csv(state: GLState, path) -> Path:
    path = Path(path)
    rows = np.column_stack([np.arange(len(state.trace)), np.asarray(state.trace, dtype=float)]) \
        if state.trace else np.zeros((0, 2))
    np.savetxt(path, rows, delimiter=",", header="iteration,energy", comments="", fmt=["%d", "%.12g"])
    return path


# --- energy -------------------------------------------------------------------------

def _plaquette_mismatch(A: LinkField2D, B0: ScalarField2D) -> np.ndarray:
    """curl A - B0 on plaquette corners (B0 corner-averaged), zero elsewhere."""
    plaq = A.grid.plaquette_mask()
    return np.where(plaq, curl(A).values - vertex_average(B0).values, 0.0)


def energy_parts(psi: ComplexField2D, A: LinkField2D, a: ScalarField2D, B0: ScalarField2D,
                 kappa: float, H: float) -> Dict[str, float]:
    for other in (A.grid, a.grid, B0.grid):
        _require_same_grid(psi.grid, other)
    g = psi.grid
    h2 = g.h ** 2
    kinetic = kinetic_energy(psi, A, kappa * H)
    excess = (a.values - np.abs(psi.values) ** 2)[g.inside]
    potential = 0.5 * kappa ** 2 * h2 * float(np.sum(excess ** 2))
    magnetic = (kappa * H) ** 2 * h2 * float(np.sum(_plaquette_mismatch(A, B0) ** 2))
    return {"kinetic": kinetic, "potential": potential, "magnetic": magnetic,
            "total": kinetic + potential + magnetic}


def full_energy(state: GLState, a: ScalarField2D, B0: ScalarField2D) -> float:
    return energy_parts(state.psi, state.A, a, B0, state.kappa, state.H)["total"]


def psi4_integral(state: GLState) -> float:
    return state.grid.h ** 2 * float(np.sum(np.abs(state.psi.values) ** 4))


def identity_gap(state: GLState, a: ScalarField2D, B0: ScalarField2D) -> float:
    """|E0(psi, A) - kappa^2/2 int (a^2 - |psi|^4)| / kappa^2, zero at critical points."""
    parts = energy_parts(state.psi, state.A, a, B0, state.kappa, state.H)
    g = state.grid
    rhs = 0.5 * state.kappa ** 2 * g.h ** 2 * float(
        np.sum((a.values ** 2 - np.abs(state.psi.values) ** 4)[g.inside]))
    return abs(parts["kinetic"] + parts["potential"] - rhs) / state.kappa ** 2


# --- problem context ----------------------------------------------------------------

class GLProblem:
    """Fixed data of one (a, B0, kappa, H) problem: potential F, Poisson solver, masks."""

    def __init__(self, a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float,
                 potential: Optional[PotentialBundle] = None, poisson_tol: float = 1e-10):
        _require_same_grid(a.grid, B0.grid)
        if not kappa > 0:
            raise ValueError(f"kappa must be positive, got {kappa}")
        if H < 0:
            raise ValueError(f"H must be >= 0, got {H}")
        self.grid = a.grid
        self.a = a
        self.B0 = B0
        self.kappa = float(kappa)
        self.H = float(H)
        self.c = self.kappa * self.H
        self.solver = PoissonSolver(self.grid, poisson_tol)
        if potential is None:
            potential = vector_potential_from_field(B0, tol=poisson_tol, solver=self.solver)
        else:
            _require_same_grid(potential.grid, self.grid)
        self.potential = potential
        self.F = potential.F
        self.plaq = self.grid.plaquette_mask()
        self.cap = math.sqrt(max(a.sup(), 0.0))

    def links(self, w: Optional[np.ndarray]) -> LinkField2D:
        if w is None:
            return self.F
        return self.F + stream_to_links(self.grid, w)

    def psi_energy_and_gradient(self, psi: np.ndarray, A: LinkField2D) -> Tuple[float, np.ndarray]:
        """Kinetic plus potential energy and its derivative in conj(psi)."""
        g = self.grid
        h2 = g.h ** 2
        kin, Lpsi = kinetic_energy_and_laplacian(psi, A, self.c)
        excess = self.a.values - np.abs(psi) ** 2
        pot = 0.5 * self.kappa ** 2 * h2 * float(np.sum(excess[g.inside] ** 2))
        grad = Lpsi - self.kappa ** 2 * h2 * excess * psi
        return kin + pot, np.where(g.inside, grad, 0.0)

    def magnetic(self, A: LinkField2D) -> float:
        return self.c ** 2 * self.grid.h ** 2 * float(np.sum(_plaquette_mismatch(A, self.B0) ** 2))

    def total_energy(self, psi: np.ndarray, w: Optional[np.ndarray]) -> float:
        A = self.links(w)
        return self.psi_energy_and_gradient(psi, A)[0] + self.magnetic(A)

    def ampere_target(self, psi: np.ndarray, A: LinkField2D) -> np.ndarray:
        """q* with Laplace_h q* = -D^T g_theta / (2 c^2 h^2), the stationary curl A - B0."""
        jx, jy = link_current(psi, A, self.c)
        rhs = links_to_stream(self.grid, -2.0 * self.c * jx, -2.0 * self.c * jy)
        rhs = np.where(self.plaq, -rhs / (2.0 * self.c ** 2 * self.grid.h ** 2), 0.0)
        return self.solver.solve(rhs)[0]

    def residuals(self, psi: np.ndarray, A: LinkField2D) -> Dict[str, float]:
        g = self.grid
        grad = self.psi_energy_and_gradient(psi, A)[1] / g.h ** 2
        mod = np.abs(grad)
        q = _plaquette_mismatch(A, self.B0)
        out = {
            "eq_a": float(mod[g.inside].max()),
            "natural_bc": float(mod[g.boundary_mask].max(initial=0.0)),
            "ampere": 0.0,
            "field_bc": float(np.abs(q[_boundary_plaquettes(self.plaq)]).max(initial=0.0)),
        }
        if self.c > 0:
            out["ampere"] = float(np.abs(q - self.ampere_target(psi, A))[self.plaq].max(initial=0.0))
        return out

    def state(self, psi: np.ndarray, w: Optional[np.ndarray], converged: bool, iterations: int,
              seed: Optional[int], trace: Sequence[float]) -> GLState:
        A = self.links(w)
        psi_field = ComplexField2D(self.grid, psi)
        energy = energy_parts(psi_field, A, self.a, self.B0, self.kappa, self.H)["total"]
        return GLState(psi_field, A, self.kappa, self.H, energy, self.residuals(psi, A), w,
                       converged, iterations, seed, tuple(trace))


def _boundary_plaquettes(plaq: np.ndarray) -> np.ndarray:
    pad = np.pad(plaq, 1, constant_values=False)
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return plaq & ~interior


def residuals(state: GLState, a: ScalarField2D, B0: ScalarField2D,
              potential: Optional[PotentialBundle] = None) -> Dict[str, float]:
    """Max-norms of the discrete (a) and (b) equations and of the boundary conditions (c), (d)."""
    problem = GLProblem(a, B0, state.kappa, state.H, potential)
    return problem.residuals(state.psi.values, state.A)


# --- descent ------------------------------------------------------------------------

def _truncate(psi: np.ndarray, cap: float) -> np.ndarray:
    mod = np.abs(psi)
    over = mod > cap
    if not over.any():
        return psi
    out = psi.copy()
    out[over] = psi[over] / mod[over] * cap
    return out


def _real_dot(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.real(np.vdot(u, v)))


def _descend_psi(problem: GLProblem, psi: np.ndarray, A: LinkField2D, tol: float, maxiter: int,
                 trace: List[float], offset: float = 0.0) -> Tuple[np.ndarray, bool, int]:
    g = problem.grid
    h2 = g.h ** 2
    psi = _truncate(np.where(g.inside, psi, 0.0), problem.cap)
    E, G = problem.psi_energy_and_gradient(psi, A)
    a_max = float(np.abs(problem.a.values[g.inside]).max())
    base_step = 1.0 / (8.0 + 3.0 * problem.kappa ** 2 * h2 * max(a_max, 1.0))
    step = base_step
    for it in range(maxiter):
        if float(np.abs(G).max()) / h2 < tol:
            return psi, True, it
        t = step
        for _ in range(50):
            trial = _truncate(psi - t * G, problem.cap)
            Et, Gt = problem.psi_energy_and_gradient(trial, A)
            if Et <= E + 2.0 * ARMIJO * _real_dot(G, trial - psi):
                break
            t *= 0.5
        else:
            logger.warning("psi descent: line search failed at iteration %d (energy %.10g)", it, E + offset)
            return psi, False, it
        dpsi, dG = trial - psi, Gt - G
        curv = _real_dot(dpsi, dG)
        step = _real_dot(dpsi, dpsi) / curv if curv > 0 else 2.0 * t
        step = min(max(step, 1e-6 * base_step), 1e6 * base_step)
        psi, E, G = trial, Et, Gt
        trace.append(E + offset)
        if it % 500 == 0:
            logger.debug("psi descent %d: energy %.10g, residual %.3e", it, E + offset,
                         float(np.abs(G).max()) / h2)
    return psi, float(np.abs(G).max()) / h2 < tol, maxiter


def default_tolerance(kappa: float) -> float:
    return 1e-6 * kappa ** 2


def default_initial(a: ScalarField2D, seed: int = 0, perturbation: float = 0.01) -> ComplexField2D:
    """sqrt(a_+) with a small random phase."""
    rng = np.random.default_rng(seed)
    phase = perturbation * rng.standard_normal(a.grid.shape)
    return ComplexField2D(a.grid, np.sqrt(np.clip(a.values, 0.0, None)) * np.exp(1j * phase))


def _initial_values(problem: GLProblem, init, seed: int) -> np.ndarray:
    if init is None:
        return np.array(default_initial(problem.a, seed).values)
    if isinstance(init, GLState):
        init = init.psi
    _require_same_grid(init.grid, problem.grid)
    return np.array(init.values)


def minimize_frozen(a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float, init=None,
                    tol: Optional[float] = None, maxiter: int = 20000, seed: int = 0,
                    potential: Optional[PotentialBundle] = None,
                    problem: Optional[GLProblem] = None) -> GLState:
    """Minimize over psi with A = F fixed until the (a)-residual max-norm drops below tol."""
    problem = problem or GLProblem(a, B0, kappa, H, potential)
    tol = default_tolerance(kappa) if tol is None else tol
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    psi = _initial_values(problem, init, seed)
    offset = problem.magnetic(problem.F)
    trace: List[float] = []
    psi, ok, its = _descend_psi(problem, psi, problem.F, tol, maxiter, trace, offset)
    state = problem.state(psi, None, ok, its, seed, trace)
    if not ok:
        logger.warning("frozen minimization kappa=%.4g H=%.4g: stopped after %d iterations, residual %.3e",
                       kappa, H, its, state.residuals["eq_a"])
    logger.info("frozen minimization kappa=%.4g H=%.4g: energy %.8g in %d iterations", kappa, H, state.energy, its)
    return state


def minimize_coupled(a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float, init=None,
                     tol: Optional[float] = None, outer: int = 200, inner: int = 500, seed: int = 0,
                     potential: Optional[PotentialBundle] = None,
                     problem: Optional[GLProblem] = None) -> GLState:
    """Alternate psi descent with Picard updates of A = F + grad_perp(w)."""
    problem = problem or GLProblem(a, B0, kappa, H, potential)
    tol = default_tolerance(kappa) if tol is None else tol
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if problem.c == 0:
        return minimize_frozen(a, B0, kappa, H, init, tol, outer * inner, seed, problem=problem)
    g = problem.grid
    psi = _initial_values(problem, init, seed)
    w = np.zeros((g.nx + 1, g.ny + 1))
    if isinstance(init, GLState) and init.w is not None:
        w = np.array(init.w)
    r0 = _plaquette_mismatch(problem.F, problem.B0)
    trace: List[float] = []
    iterations = 0
    converged = False
    for sweep_no in range(outer):
        A = problem.links(w)
        psi, _, its = _descend_psi(problem, psi, A, tol, inner, trace, problem.magnetic(A))
        iterations += its
        qstar = problem.ampere_target(psi, A)
        target = problem.solver.solve(np.where(problem.plaq, qstar - r0, 0.0))[0]
        E0 = problem.total_energy(psi, w)
        t = 1.0
        for _ in range(12):
            trial = w + t * (target - w)
            Et = problem.total_energy(psi, trial)
            if Et <= E0:
                w = trial
                trace.append(Et)
                break
            t *= 0.5
        res = problem.residuals(psi, problem.links(w))
        logger.debug("coupled sweep %d: energy %.10g, eq_a %.3e, ampere %.3e",
                     sweep_no, trace[-1] if trace else E0, res["eq_a"], res["ampere"])
        if res["eq_a"] < tol and res["ampere"] < tol:
            converged = True
            break
    state = problem.state(psi, w, converged, iterations, seed, trace)
    if not converged:
        logger.warning("coupled minimization kappa=%.4g H=%.4g: not converged after %d sweeps (eq_a %.3e, ampere %.3e)",
                       kappa, H, outer, state.residuals["eq_a"], state.residuals["ampere"])
    logger.info("coupled minimization kappa=%.4g H=%.4g: energy %.8g", kappa, H, state.energy)
    return state


# --- diagnostics --------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostics:
    normal: bool
    kinetic_ratio: float
    curl_ratio: float
    frozen_ratio: float
    sup_excess: float
    magnetic_energy: float
    l2_norm: float
    identity_gap: float

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


def diagnostics(state: GLState, a: ScalarField2D, B0: ScalarField2D,
                potential: Optional[PotentialBundle] = None) -> Diagnostics:
    g = state.grid
    h2 = g.h ** 2
    kappa, H, c = state.kappa, state.H, state.kappa * state.H
    F = potential.F if potential is not None else vector_potential_from_field(B0).F
    plaq = g.plaquette_mask()
    mismatch = _plaquette_mismatch(state.A, B0)
    magnetic = H ** 2 * h2 * float(np.sum(mismatch ** 2))
    sup_excess = float((np.abs(state.psi.values) ** 2)[g.inside].max()) - max(a.sup(), 0.0)
    l2 = state.l2_norm()
    gap = identity_gap(state, a, B0)
    if state.is_normal():
        nan = float("nan")
        return Diagnostics(True, nan, nan, nan, sup_excess, magnetic, l2, gap)
    l4 = psi4_integral(state) ** 0.25
    curl_af = np.where(plaq, curl(state.A).values - curl(F).values, 0.0)
    curl_norm = math.sqrt(h2 * float(np.sum(curl_af ** 2)))
    return Diagnostics(
        normal=False,
        kinetic_ratio=math.sqrt(kinetic_energy(state.psi, state.A, c)) / (kappa * l2),
        curl_ratio=H * curl_norm / (l2 * l4),
        frozen_ratio=math.sqrt(kinetic_energy(state.psi, F, c)) / (kappa * l2),
        sup_excess=sup_excess,
        magnetic_energy=magnetic,
        l2_norm=l2,
        identity_gap=gap,
    )


def ratio_growth(values: Sequence[float], factor: float = 1.5) -> bool:
    """True when a sweep's ratios increase at every step and by more than `factor` overall."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size < 2:
        return False
    return bool(np.all(np.diff(v) > 0) and v[-1] > factor * v[0])


# --- test configuration -------------------------------------------------------------

@dataclass(frozen=True)
class TestConfigParams:
    __test__ = False

    ell: float
    rho: float
    delta: float
    sample: str = "min5"

    def admissibility(self, kappa: float, H: float) -> float:
        return self.ell ** 2 * kappa * H * self.rho

    def admissible(self, kappa: float, H: float) -> bool:
        return self.admissibility(kappa, H) > 1.0

    @classmethod
    def for_kappa(cls, kappa: float, H: float) -> "TestConfigParams":
        ell = kappa ** (-7.0 / 12.0)
        rho = kappa ** (-17.0 / 24.0)
        delta = kappa ** (-1.0 / 12.0)
        params = cls(ell, rho, delta)
        if H > 0 and not params.admissible(kappa, H):
            wide = math.sqrt(1.5 / (kappa * H * rho))
            logger.warning("test configuration: ell=%.4g not admissible at kappa=%.4g H=%.4g, widened to %.4g",
                           ell, kappa, H, wide)
            params = cls(wide, rho, delta)
        return params


def _point_sampler(f: ScalarField2D) -> RegularGridInterpolator:
    g = f.grid
    return RegularGridInterpolator((g.x, g.y), np.asarray(f.values), method="linear",
                                   bounds_error=False, fill_value=None)


def _cell_interpolator(cell_u: ComplexField2D, R: float) -> RegularGridInterpolator:
    """Cell minimizer on [-R/2, R/2]^2 with the zero boundary value at the edges."""
    cg = cell_u.grid
    xs = np.concatenate([[-0.5 * R], cg.x, [0.5 * R]])
    ys = np.concatenate([[-0.5 * R], cg.y, [0.5 * R]])
    vals = np.pad(cell_u.values, 1)
    return RegularGridInterpolator((xs, ys), vals, method="linear", bounds_error=False, fill_value=0.0)


def build_test_configuration(a: ScalarField2D, B0: ScalarField2D, kappa: float, H: float,
                             params: Optional[TestConfigParams] = None,
                             cell_cache: Optional[CellCache] = None,
                             fhat: Optional[FhatTable] = None,
                             potential: Optional[PotentialBundle] = None) -> GLState:
    """Upper-bound configuration (s, F) built square by square."""
    _require_same_grid(a.grid, B0.grid)
    g = a.grid
    params = params or TestConfigParams.for_kappa(kappa, H)
    if not params.admissible(kappa, H):
        raise ValueError(f"parameters not admissible: ell^2 kappa H rho = {params.admissibility(kappa, H):.4g} <= 1")
    cell_cache = cell_cache or CellCache()
    problem = GLProblem(a, B0, kappa, H, potential)
    ell, sigma = params.ell, H / kappa
    xmin, xmax, ymin, ymax = g.bounds
    kx = np.arange(np.ceil(xmin / ell), np.floor(xmax / ell) + 1) * ell
    ky = np.arange(np.ceil(ymin / ell), np.floor(ymax / ell) + 1) * ell
    GX, GY = (v.ravel() for v in np.meshgrid(kx, ky, indexing="ij"))
    i0, i1, j0, j1 = g.square_index_range(GX, GY, ell)
    inside_counts = box_counts(g.inside, i0, i1, j0, j1)
    sizes = np.clip(i1 - i0 + 1, 0, None) * np.clip(j1 - j0 + 1, 0, None)
    strong = g.inside & (np.abs(B0.values) > params.rho)
    positive = g.inside & (a.values > 0)
    n_strong = box_counts(strong, i0, i1, j0, j1)
    n_pos = box_counts(positive, i0, i1, j0, j1)

    a_at, b_at = _point_sampler(a), _point_sampler(B0)
    s = np.zeros(g.shape, dtype=complex)
    n_plus = n_minus = 0
    for k in range(GX.size):
        if sizes[k] == 0 or inside_counts[k] != sizes[k] or n_strong[k] != sizes[k]:
            continue
        half = 0.5 * ell
        corners = np.array([[GX[k], GY[k]], [GX[k] - half, GY[k] - half], [GX[k] + half, GY[k] - half],
                            [GX[k] - half, GY[k] + half], [GX[k] + half, GY[k] + half]])
        if not np.all(g.contains(corners[:, 0], corners[:, 1])):
            continue
        if n_pos[k] == 0:
            n_minus += 1
            continue
        if n_pos[k] != sizes[k]:
            continue
        n_plus += 1
        av = np.clip(a_at(corners), 1e-300, None)
        bv = b_at(corners)
        if fhat is not None:
            score = av ** 2 * np.asarray(fhat_eval(fhat, sigma * np.abs(bv) / av))
        else:
            score = av ** 2
        xt = corners[int(np.argmin(score))]
        gauge = local_gauge_phase(problem.F, (GX[k], GY[k]), tuple(xt), ell)
        field_value = gauge.field_value
        a_t = float(a_at(xt[None, :])[0])
        b_tilde = sigma * abs(field_value) / a_t
        if b_tilde >= 1.0:
            continue
        R = ell * math.sqrt(kappa * H * abs(field_value))
        cell = cell_cache.get(round(b_tilde, 2), round(R, 1))
        u = cell.u.values if field_value > 0 else np.conj(cell.u.values)
        interp = _cell_interpolator(ComplexField2D(cell.u.grid, u), round(R, 1))
        box = gauge.mask
        X, Y = g.mesh()
        scale = round(R, 1) / ell
        pts = np.column_stack([scale * (X[box] - GX[k]), scale * (Y[box] - GY[k])])
        phase = np.exp(1j * kappa * H * gauge.phi.values[box])
        s[box] += math.sqrt(a_t) * phase * interp(pts)
    if n_plus + n_minus == 0:
        logger.warning("test configuration: no admissible squares of side %.4g, returning the normal state", ell)
    logger.info("test configuration: %d positive and %d nonpositive squares, %d cell problem(s)",
                n_plus, n_minus, len(cell_cache))
    return problem.state(s, None, True, 0, None, ())
