#!/usr/bin/env python3
"""
Model-operator eigenvalues.

- de Gennes: -d^2/dt^2 + (t + xi)^2 on (0, T), Neumann at 0, Dirichlet at T.
  Theta0 = min over xi, attained at xi0 < 0 with Theta0 = xi0^2.
- Montgomery: -d^2/dt^2 + 1/4 (t^2 + 2 tau)^2 on (-T, T), Dirichlet ends.
  lambda0 = min over tau.
- Half-plane: magnetic Laplacian with A = -(x2^2/2 cos th, x1^2/2 sin th) on the
  strip [-L, L] x [0, L], Neumann on x2 = 0 and Dirichlet on the cut edges.
- mu1: lowest eigenvalue of -(grad - i kappa H F)^2 - kappa^2 a with Neumann BC.

1D problems use cell-centred finite differences (eigh_tridiagonal). Minimizers are roots of
the Hellmann-Feynman slope, Richardson-combined between n and 2n nodes. 2D problems go
through lowest_eigenpair: shift-invert Lanczos (eigsh) polished by inverse iteration,
with a certified residual.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import PchipInterpolator
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.optimize import brentq, minimize_scalar
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from fields import (
    Grid2D, NumericalFailure, ScalarField2D, _require_same_grid, covariant_matrix, link_phases_from_potential,
)
from gauge import PotentialBundle, conjugate_gradient, vector_potential_from_field
from sweep_util import sweep

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SpectralResult:
    value: float
    param: float = float("nan")
    truncation: float = float("nan")
    grid: int = 0
    residual: float = 0.0
    history: Tuple[Tuple[float, float], ...] = ()
    flags: Tuple[str, ...] = ()

    def to_row(self, label: float = float("nan")) -> List:
        return [label, self.value, self.param, self.residual, self.grid, self.truncation]


def write_spectral_csv(results: Sequence[SpectralResult], path, labels: Optional[Sequence[float]] = None,
                       label_name: str = "param") -> Path:
    path = Path(path)
    labels = [float("nan")] * len(results) if labels is None else list(labels)
    lines = [f"{label_name},value,minimizer,residual,grid,truncation"]
    for lab, res in zip(labels, results):
        lines.append(",".join(f"{v:.12g}" if isinstance(v, float) else str(v) for v in res.to_row(lab)))
    path.write_text("\n".join(lines) + "\n")
    return path


# --- 1D model operators ---------------------------------------------------------------

def _tridiagonal(potential: np.ndarray, h: float, left: str, right: str) -> Tuple[np.ndarray, np.ndarray]:
    """Cell-centred -u'' + V u; Neumann ghost u, Dirichlet ghost -u."""
    inv = 1.0 / h ** 2
    diag = 2.0 * inv + potential
    diag[0] += -inv if left == "neumann" else inv
    diag[-1] += -inv if right == "neumann" else inv
    off = np.full(potential.size - 1, -inv)
    return diag, off


def _lowest(diag: np.ndarray, off: np.ndarray, vectors: bool = False):
    if vectors:
        w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
        return float(w[0]), v[:, 0]
    return float(eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(0, 0))[0])


def _degennes_system(xi: float, T: float, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tridiagonal pencil at xi and the potential's xi-derivative."""
    h = T / n
    t = (np.arange(n) + 0.5) * h
    diag, off = _tridiagonal((t + xi) ** 2, h, "neumann", "dirichlet")
    return diag, off, 2.0 * (t + xi)


def _montgomery_system(tau: float, T: float, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    h = 2.0 * T / n
    t = -T + (np.arange(n) + 0.5) * h
    diag, off = _tridiagonal(0.25 * (t ** 2 + 2.0 * tau) ** 2, h, "dirichlet", "dirichlet")
    return diag, off, t ** 2 + 2.0 * tau


def _check_truncation(T: float, n: int, T_min: float, n_min: int):
    if T < T_min or n < n_min:
        raise ValueError(f"need T >= {T_min:g} and n >= {n_min}, got T={T}, n={n}")


def degennes_mu(xi: float, T: float = 10.0, n: int = 2000) -> float:
    _check_truncation(T, n, 10, 200)
    diag, off, _ = _degennes_system(xi, T, n)
    return _lowest(diag, off)


def montgomery_lambda(tau: float, T: float = 8.0, n: int = 1600) -> float:
    _check_truncation(T, n, 8, 400)
    diag, off, _ = _montgomery_system(tau, T, n)
    return _lowest(diag, off)


def montgomery_ground_state(tau: float, T: float = 8.0, n: int = 1600) -> Tuple[np.ndarray, np.ndarray, float]:
    """(t, v, lambda) with the sign of v fixed so that its largest entry is positive."""
    h = 2.0 * T / n
    t = -T + (np.arange(n) + 0.5) * h
    diag, off, _ = _montgomery_system(tau, T, n)
    lam, v = _lowest(diag, off, vectors=True)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return t, v, lam


def node_count(v: np.ndarray, floor: float = 1e-8) -> int:
    big = v[np.abs(v) > floor * np.abs(v).max()]
    return int(np.count_nonzero(np.diff(np.sign(big)) != 0))


def tridiagonal_residual(diag: np.ndarray, off: np.ndarray, value: float, v: np.ndarray) -> float:
    """||(T - value) v|| / ||v|| for the symmetric tridiagonal T."""
    r = (diag - value) * v
    r[:-1] += off * v[1:]
    r[1:] += off * v[:-1]
    return float(np.linalg.norm(r) / np.linalg.norm(v))


def _stationary_point(system, scan: np.ndarray, n: int) -> Tuple[float, float, float, bool]:
    """Minimizer, minimum and eigen-residual of the lowest eigenvalue of system(x, n).

    The minimizer is the root of d(lambda)/dx = <v, V'(x) v>, which stays sharp where
    lambda itself is flat.
    """
    values = np.array([_lowest(*system(x, n)[:2]) for x in scan])
    k = int(np.argmin(values))
    lo, hi = scan[max(k - 1, 0)], scan[min(k + 1, scan.size - 1)]

    def slope(x):
        diag, off, dV = system(x, n)
        _, v = _lowest(diag, off, vectors=True)
        return float(np.dot(dV * v, v) / np.dot(v, v))

    bracketed = slope(lo) < 0.0 < slope(hi)
    if bracketed:
        x = brentq(slope, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    else:
        x = float(minimize_scalar(lambda s: _lowest(*system(s, n)[:2]), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-10}).x)
    diag, off, _ = system(x, n)
    value, v = _lowest(diag, off, vectors=True)
    return float(x), value, tridiagonal_residual(diag, off, value, v), bracketed


def _refined_minimum(system, scan: np.ndarray, n: int, tol: float) -> SpectralResult:
    """Minimize on n and 2n nodes; Richardson-combine value and minimizer."""
    x1, v1, _, ok1 = _stationary_point(system, scan, n)
    x2, v2, residual, ok2 = _stationary_point(system, scan, 2 * n)
    value = (4.0 * v2 - v1) / 3.0
    param = (4.0 * x2 - x1) / 3.0
    history = ((1.0 / n, v1), (0.5 / n, v2))
    flags = []
    if not (ok1 and ok2):
        flags.append("unbracketed")
        logger.warning("no sign change of the eigenvalue slope near the scan minimum")
    if abs(v2 - v1) > 100 * tol:
        flags.append("refinement-gap")
        logger.warning("refinement moved the minimum by %.3e (> 100 tol)", abs(v2 - v1))
    if residual > RESIDUAL_TOL:
        flags.append("uncertified")
        logger.warning("tridiagonal eigen-residual %.3e above %.1e", residual, RESIDUAL_TOL)
    return SpectralResult(value, param, float("nan"), 2 * n, residual, history, tuple(flags))


def theta0(tol: float = 1e-6, T: float = 10.0, n: int = 2000) -> SpectralResult:
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    _check_truncation(T, n, 10, 200)
    res = _refined_minimum(lambda xi, m: _degennes_system(xi, T, m), np.linspace(-2.0, 0.0, 41), n, tol)
    res = replace(res, truncation=T)
    gap = abs(res.value - res.param ** 2)
    if gap > 10 * tol:
        res = replace(res, flags=res.flags + ("minimizer-identity",))
        logger.warning("Theta0 - xi0^2 = %.3e exceeds 10 tol", gap)
    logger.info("Theta0 = %.10f at xi0 = %.8f (xi0^2 = %.10f)", res.value, res.param, res.param ** 2)
    return res


def lambda0(tol: float = 1e-6, T: float = 8.0, n: int = 1600) -> SpectralResult:
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    _check_truncation(T, n, 8, 400)
    res = _refined_minimum(lambda tau, m: _montgomery_system(tau, T, m), np.linspace(-2.0, 1.0, 31), n, tol)
    res = replace(res, truncation=T)
    logger.info("lambda0 = %.10f at tau0 = %.8f", res.value, res.param)
    return res


# --- sparse Hermitian eigenpairs ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Eigenpair:
    value: float
    vector: np.ndarray
    residual: float
    certified: bool
    restarts: int = 0


def _residual(matrix, value: float, vector: np.ndarray) -> float:
    return float(np.linalg.norm(matrix @ vector - value * vector) / np.linalg.norm(vector))


def _inverse_operator(shifted, inner: str, tol: float):
    n = shifted.shape[0]
    if inner == "lu":
        lu = splu(shifted.tocsc())
        return LinearOperator((n, n), matvec=lambda b: lu.solve(np.asarray(b).ravel()), dtype=shifted.dtype)
    if inner == "cg":
        diag = shifted.diagonal()
        precond = sp.diags(1.0 / diag)

        def _solve(b):
            b = np.asarray(b).ravel()
            x, info = conjugate_gradient(shifted, b, tol, maxiter=10 * n, precond=precond)
            if info > 0:
                raise NumericalFailure(f"inner CG did not converge in {info} iterations", flag="spectral.inner")
            return x

        return LinearOperator((n, n), matvec=_solve, dtype=shifted.dtype)
    raise ValueError(f"inner solver must be 'lu' or 'cg', got {inner!r}")


def lowest_eigenpair(matrix, shift: float, tol: float = RESIDUAL_TOL, seed: int = 0, inner: str = "lu",
                     max_restarts: int = 3, polish: int = 50) -> Eigenpair:
    """Lowest eigenpair of a sparse Hermitian matrix whose spectrum lies above `shift`."""
    matrix = sp.csr_matrix(matrix)
    n = matrix.shape[0]
    shifted = (matrix - shift * sp.identity(n, dtype=matrix.dtype, format="csr")).tocsr()
    op = _inverse_operator(shifted, inner, 1e-12)
    rng = np.random.default_rng(seed)
    value = vector = None
    restarts = 0
    for attempt in range(max_restarts + 1):
        v0 = rng.standard_normal(n) + (1j * rng.standard_normal(n) if np.iscomplexobj(matrix.data) else 0.0)
        try:
            w, v = eigsh(matrix, k=1, sigma=shift, which="LM", OPinv=op, v0=v0, tol=1e-12)
            value, vector = float(np.real(w[0])), v[:, 0]
            break
        except ArpackNoConvergence as exc:
            restarts += 1
            logger.warning("Lanczos stagnated (attempt %d), restarting from a new vector", attempt + 1)
            if exc.eigenvalues.size:
                value, vector = float(np.real(exc.eigenvalues[0])), exc.eigenvectors[:, 0]
    if vector is None:
        raise NumericalFailure("shift-invert Lanczos failed after restarts", flag="spectral.lanczos")
    # polishing inverse iteration with the fixed shift
    scale = max(1.0, abs(value))
    residual = _residual(matrix, value, vector)
    for _ in range(polish):
        if residual <= tol * scale:
            break
        vector = op.matvec(vector)
        vector = vector / np.linalg.norm(vector)
        value = float(np.real(np.vdot(vector, matrix @ vector)))
        residual = _residual(matrix, value, vector)
    certified = residual <= tol * scale
    if not certified:
        logger.warning("eigenvalue %.10g: residual %.3e above %.1e", value, residual, tol * scale)
    return Eigenpair(value, vector / np.linalg.norm(vector), residual, certified, restarts)


def dense_lowest_eigenvalue(matrix) -> float:
    """Dense oracle for small grids (up to 64 x 64 nodes)."""
    if matrix.shape[0] > 64 * 64:
        raise ValueError(f"dense oracle limited to 4096 unknowns, got {matrix.shape[0]}")
    dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    return float(eigh(dense, eigvals_only=True, subset_by_index=[0, 0])[0])


# --- half-plane model -----------------------------------------------------------------

def halfplane_matrix(theta: float, L: float = 8.0, cells_per_unit: int = 10) -> Tuple[Grid2D, sp.csr_matrix]:
    n = int(round(L * cells_per_unit))
    grid = Grid2D.rectangle(2 * n, n, L / n, origin=(-L, 0.0))
    c, s = math.cos(theta), math.sin(theta)
    links = link_phases_from_potential(grid, lambda X, Y: (-0.5 * Y ** 2 * c, -0.5 * X ** 2 * s))
    return grid, covariant_matrix(grid, links, 1.0, dirichlet=("left", "right", "up"))


def _halfplane_value(theta: float, L: float, cells_per_unit: int, tol: float) -> Eigenpair:
    _, matrix = halfplane_matrix(theta, L, cells_per_unit)
    return lowest_eigenpair(matrix, -1.0, tol)


def halfplane_lambda(theta: float, L: float = 8.0, cells_per_unit: int = 10, tol: float = RESIDUAL_TOL,
                     check_truncation: bool = True, refine: bool = False) -> SpectralResult:
    if not 0.0 < theta < math.pi:
        raise ValueError(f"theta must lie in (0, pi), got {theta}")
    if L < 8:
        raise ValueError(f"L must be >= 8, got {L}")
    pair = _halfplane_value(theta, L, cells_per_unit, tol)
    value = pair.value
    history = [(1.0 / cells_per_unit, pair.value)]
    flags = [] if pair.certified else ["uncertified"]
    if refine:
        fine = _halfplane_value(theta, L, 2 * cells_per_unit, tol)
        history.append((0.5 / cells_per_unit, fine.value))
        value = (4.0 * fine.value - pair.value) / 3.0
    if check_truncation:
        wide = _halfplane_value(theta, 1.5 * L, cells_per_unit, tol)
        if abs(wide.value - pair.value) > 0.01 * abs(pair.value):
            flags.append("truncation")
            logger.warning("half-plane theta=%.4f: value moved %.3g%% from L=%.3g to %.3g", theta,
                           100 * abs(wide.value - pair.value) / abs(pair.value), L, 1.5 * L)
    logger.info("half-plane lambda(theta=%.4f) = %.8f", theta, value)
    return SpectralResult(value, theta, L, 2 * int(round(L * cells_per_unit)), pair.residual,
                          tuple(history), tuple(flags))


@dataclass(frozen=True, eq=False)
class HalfPlaneTable:
    thetas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.thetas, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if th.ndim != 1 or th.shape != v.shape or np.any(np.diff(th) <= 0):
            raise ValueError("thetas must be strictly increasing and match values")
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_interp", PchipInterpolator(th, v))

    def __call__(self, theta):
        th = np.clip(np.asarray(theta, dtype=float), self.thetas[0], self.thetas[-1])
        out = self._interp(th)
        return float(out) if np.ndim(theta) == 0 else out

    def to_dict(self) -> Dict:
        return {"thetas": self.thetas.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "HalfPlaneTable":
        return cls(np.asarray(data["thetas"]), np.asarray(data["values"]))


def _halfplane_task(args) -> float:
    theta, L, cells_per_unit = args
    return halfplane_lambda(theta, L, cells_per_unit, check_truncation=False).value


def build_halfplane_table(lam0: float, L: float = 8.0, cells_per_unit: int = 10, workers: int = 1,
                          steps: int = 12) -> HalfPlaneTable:
    """theta = k pi / steps for 0 < k < steps, plus the exact endpoint values lambda0."""
    inner = [k * math.pi / steps for k in range(1, steps)]
    values = sweep(_halfplane_task, [(t, L, cells_per_unit) for t in inner], workers, label="half-plane table")
    return HalfPlaneTable(np.array([0.0] + inner + [math.pi]), np.array([lam0] + list(values) + [lam0]))


class SpectralCache:
    """Theta0, lambda0 and the half-plane table, computed on first use and kept in a JSON file."""

    def __init__(self, path=None, workers: int = 1):
        self.path = Path(path) if path is not None else None
        self.workers = workers
        self.data: Dict = {}
        if self.path is not None and self.path.exists():
            self.data = json.loads(self.path.read_text())

    def _save(self):
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def _result(self, key: str, compute) -> SpectralResult:
        if key not in self.data:
            res = compute()
            self.data[key] = {"value": res.value, "param": res.param, "history": [list(h) for h in res.history],
                              "truncation": res.truncation, "grid": res.grid,
                              "residual": res.residual, "flags": list(res.flags)}
            self._save()
        d = self.data[key]
        return SpectralResult(d["value"], d["param"], d["truncation"], d["grid"], d.get("residual", 0.0),
                              tuple(tuple(h) for h in d["history"]), tuple(d.get("flags", ())))

    def theta0(self) -> SpectralResult:
        return self._result("theta0", theta0)

    def lambda0(self) -> SpectralResult:
        return self._result("lambda0", lambda0)

    def halfplane_table(self) -> HalfPlaneTable:
        if "halfplane" not in self.data:
            table = build_halfplane_table(self.lambda0().value, workers=self.workers)
            self.data["halfplane"] = table.to_dict()
            self._save()
        return HalfPlaneTable.from_dict(self.data["halfplane"])

    def entries(self) -> List[str]:
        return sorted(self.data)


# --- domain eigenvalues ---------------------------------------------------------------

def mu1_matrix(kappa: float, H: float, a: ScalarField2D, F) -> sp.csr_matrix:
    grid = a.grid
    base = covariant_matrix(grid, F, kappa * H)
    return (base - kappa ** 2 * sp.diags(a.values[grid.inside].astype(complex))).tocsr()


def mu1(kappa: float, H: float, a: ScalarField2D, B0: ScalarField2D, grid: Optional[Grid2D] = None,
        tol: float = RESIDUAL_TOL, potential: Optional[PotentialBundle] = None, inner: str = "cg",
        seed: int = 0) -> SpectralResult:
    """Lowest eigenvalue of -(grad - i kappa H F)^2 - kappa^2 a with Neumann conditions."""
    grid = a.grid if grid is None else grid
    _require_same_grid(grid, a.grid)
    _require_same_grid(grid, B0.grid)
    potential = potential or vector_potential_from_field(B0)
    matrix = mu1_matrix(kappa, H, a, potential.F)
    shift = -kappa ** 2 * a.sup() - 1.0
    pair = lowest_eigenpair(matrix, shift, tol, seed, inner)
    flags = () if pair.certified else ("uncertified",)
    if pair.restarts:
        flags += ("restarted",)
    logger.info("mu1(kappa=%.4g, H=%.4g) = %.8g (residual %.2e)", kappa, H, pair.value, pair.residual)
    return SpectralResult(pair.value, float("nan"), float("nan"), grid.nx, pair.residual, (), flags)


def neumann_field_sweep(B0: ScalarField2D, B_list: Sequence[float],
                        potential: Optional[PotentialBundle] = None, tol: float = RESIDUAL_TOL,
                        ) -> List[Dict[str, float]]:
    """mu^N(B F)/B and mu^N(B F)/B^(2/3) along a field sweep."""
    potential = potential or vector_potential_from_field(B0)
    rows = []
    for B in B_list:
        matrix = covariant_matrix(B0.grid, potential.F, float(B))
        pair = lowest_eigenpair(matrix, -1.0, tol)
        rows.append({"B": float(B), "mu": pair.value, "mu_over_B": pair.value / B,
                     "mu_over_B23": pair.value / B ** (2.0 / 3.0), "residual": pair.residual})
        logger.debug("mu^N(%.4g F) = %.8g", B, pair.value)
    return rows
