#!/usr/bin/env python3
"""
Canonical potential F with curl F = B0 and F.nu = 0, local gauge phases and
discrete curl / divergence.

F is built from a stream function u on the vertex grid (cell corners):
u = 0 on boundary corners, Laplace_h u = B0 at plaquette corners, and the link
across the dual edge between two corners carries their difference. The plaquette
circulation of such links is h^2 * Laplace_h u, so curl F reproduces the
corner-averaged B0 up to the CG residual and div F vanishes identically.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from fields import (
    Grid2D, LinkField2D, NumericalFailure, ScalarField2D, _require_same_grid,
    link_phases_from_potential, read_field_binary, read_links_binary, vertex_average,
    write_field_binary, write_links_binary,
)

logger = logging.getLogger(__name__)


def conjugate_gradient(matrix, rhs, rtol: float, maxiter: Optional[int] = None, precond=None,
                       callback=None, x0=None):
    try:
        return cg(matrix, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=precond, callback=callback)
    except TypeError:
        # scipy < 1.12 names the relative tolerance `tol`
        return cg(matrix, rhs, x0=x0, tol=rtol, atol=0.0, maxiter=maxiter, M=precond, callback=callback)


class PoissonSolver:
    """Dirichlet 5-point Laplacian on the plaquette corners of a grid, solved by Jacobi-CG."""

    def __init__(self, grid: Grid2D, tol: float = 1e-10, maxiter: Optional[int] = None):
        if not tol > 0:
            raise ValueError(f"tol must be positive, got {tol}")
        self.grid = grid
        self.tol = tol
        self.unknown = grid.plaquette_mask()
        n = int(self.unknown.sum())
        self.size = n
        self.maxiter = maxiter or max(1000, 20 * (grid.nx + grid.ny) ** 2 // 4)
        index = -np.ones(self.unknown.shape, dtype=np.int64)
        index[self.unknown] = np.arange(n)
        self._index = index
        rows, cols = [np.arange(n)], [np.arange(n)]
        vals = [np.full(n, 4.0)]
        pad = np.pad(index, 1, constant_values=-1)
        core = index[self.unknown]
        for nb in (pad[:-2, 1:-1], pad[2:, 1:-1], pad[1:-1, :-2], pad[1:-1, 2:]):
            nbr = nb[self.unknown]
            ok = nbr >= 0
            rows.append(core[ok])
            cols.append(nbr[ok])
            vals.append(np.full(ok.sum(), -1.0))
        h2 = grid.h ** 2
        # negative Laplacian, SPD
        self.matrix = sp.coo_matrix((np.concatenate(vals) / h2, (np.concatenate(rows), np.concatenate(cols))),
                                    shape=(n, n)).tocsr()
        diag_inv = np.full(n, h2 / 4.0)
        self._precond = sp.diags(diag_inv)

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        """Laplace_h u on the unknown corners (u taken as zero elsewhere)."""
        out = np.zeros(self.unknown.shape)
        if self.size:
            out[self.unknown] = -(self.matrix @ u[self.unknown])
        return out

    def solve(self, rhs: np.ndarray, tol: Optional[float] = None) -> Tuple[np.ndarray, int]:
        """u with Laplace_h u = rhs on unknown corners and u = 0 elsewhere.

        The CG target is max-norm: residual <= tol * max|rhs|.
        """
        tol = self.tol if tol is None else tol
        u = np.zeros(self.unknown.shape)
        b = -np.asarray(rhs, dtype=float)[self.unknown]
        if self.size == 0 or not np.any(b):
            return u, 0
        rtol = tol * np.abs(b).max() / np.linalg.norm(b)
        iterations = [0]

        def _count(_):
            iterations[0] += 1

        sol, info = conjugate_gradient(self.matrix, b, rtol, self.maxiter, self._precond, _count)
        residual = float(np.abs(self.matrix @ sol - b).max())
        if info > 0:
            raise NumericalFailure(f"Poisson CG did not converge in {info} iterations (residual {residual:.3e})",
                                   flag="gauge.poisson", residual=residual)
        logger.debug("Poisson solve: %d unknowns, %d iterations, residual %.2e", self.size, iterations[0], residual)
        u[self.unknown] = sol
        return u, iterations[0]


def stream_to_links(grid: Grid2D, u: np.ndarray) -> LinkField2D:
    """Discrete perpendicular gradient (-d2 u, d1 u) as edge integrals."""
    return LinkField2D(grid, -(u[1:-1, 1:] - u[1:-1, :-1]), u[1:, 1:-1] - u[:-1, 1:-1])


def links_to_stream(grid: Grid2D, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Exact adjoint of stream_to_links: corner array (nx+1, ny+1)."""
    r = np.zeros((grid.nx + 1, grid.ny + 1))
    r[1:-1, 1:] -= gx
    r[1:-1, :-1] += gx
    r[1:, 1:-1] += gy
    r[:-1, 1:-1] -= gy
    return r


def curl(A: LinkField2D) -> ScalarField2D:
    """Plaquette circulation / h^2 on the vertex grid, zero off the plaquettes."""
    g = A.grid
    out = np.zeros((g.nx + 1, g.ny + 1))
    out[1:-1, 1:-1] = A.hx[:, :-1] + A.hy[1:, :] - A.hx[:, 1:] - A.hy[:-1, :]
    out = np.where(g.plaquette_mask(), out / g.h ** 2, 0.0)
    return ScalarField2D(g.vertex_grid(), out)


def divergence(A: LinkField2D) -> ScalarField2D:
    """Net outflow of the edge values per node / h^2 (missing links carry nothing)."""
    g = A.grid
    out = np.zeros(g.shape)
    out[:-1, :] += A.hx
    out[1:, :] -= A.hx
    out[:, :-1] += A.hy
    out[:, 1:] -= A.hy
    return ScalarField2D(g, np.where(g.inside, out / g.h ** 2, 0.0))


@dataclass(frozen=True, eq=False)
class PotentialBundle:
    F: LinkField2D
    stream: ScalarField2D
    residual_curl: float
    tol: float = 1e-10
    iterations: int = 0

    @property
    def grid(self) -> Grid2D:
        return self.F.grid

    def normal_flux(self) -> float:
        """Largest edge integral of F across a boundary face."""
        g = self.grid
        u = self.stream.values
        u00, u10, u01, u11 = u[:-1, :-1], u[1:, :-1], u[:-1, 1:], u[1:, 1:]
        faces = g.missing_faces()
        flux = [np.abs(u11 - u10)[faces["right"]], np.abs(u01 - u00)[faces["left"]],
                np.abs(u11 - u01)[faces["up"]], np.abs(u10 - u00)[faces["down"]]]
        return float(max((f.max() for f in flux if f.size), default=0.0))

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_field_binary(self.stream, directory / "stream.bin")
        write_links_binary(self.F, directory / "F.bin")
        meta = {"residual_curl": self.residual_curl, "tol": self.tol, "iterations": self.iterations,
                "origin": list(self.grid.origin)}
        (directory / "potential.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory, grid: Grid2D) -> "PotentialBundle":
        directory = Path(directory)
        meta = json.loads((directory / "potential.json").read_text())
        stream = read_field_binary(directory / "stream.bin", grid.vertex_grid())
        F = read_links_binary(directory / "F.bin", grid)
        return cls(F, stream, meta["residual_curl"], meta["tol"], meta["iterations"])


def vector_potential_from_field(B0: ScalarField2D, grid: Optional[Grid2D] = None, tol: float = 1e-10,
                                solver: Optional[PoissonSolver] = None) -> PotentialBundle:
    grid = B0.grid if grid is None else grid
    _require_same_grid(grid, B0.grid)
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    solver = solver or PoissonSolver(grid, tol)
    target = vertex_average(B0).values
    u, iterations = solver.solve(target, tol)
    F = stream_to_links(grid, u)
    plaq = grid.plaquette_mask()
    residual = float(np.abs(curl(F).values - target)[plaq].max()) if plaq.any() else 0.0
    logger.info("potential F: %d CG iterations, max|curl F - B0| = %.2e", iterations, residual)
    return PotentialBundle(F, ScalarField2D(grid.vertex_grid(), u), residual, tol, iterations)


def unit_field_links(grid: Grid2D, center: Tuple[float, float] = (0.0, 0.0)) -> LinkField2D:
    """Links of A0(x - c) = 1/2 (-(x2 - c2), x1 - c1), the unit-curl potential."""
    c1, c2 = center
    return link_phases_from_potential(grid, lambda X, Y: (-0.5 * (Y - c2), 0.5 * (X - c1)))


@dataclass(frozen=True, eq=False)
class LocalGauge:
    phi: ScalarField2D
    defect: float
    mask: np.ndarray
    field_value: float
    residual: LinkField2D
    box: Tuple[int, int, int, int]

    def defect_for(self, phi_values: np.ndarray) -> float:
        return _phase_defect(self.residual, phi_values, self.box)


def _phase_defect(G: LinkField2D, phi: np.ndarray, box) -> float:
    """Sup-norm of G - grad(phi) over the links of the square, per unit length."""
    i0, i1, j0, j1 = box
    ex = G.hx[i0:i1, j0:j1 + 1] - (phi[i0 + 1:i1 + 1, j0:j1 + 1] - phi[i0:i1, j0:j1 + 1])
    ey = G.hy[i0:i1 + 1, j0:j1] - (phi[i0:i1 + 1, j0 + 1:j1 + 1] - phi[i0:i1 + 1, j0:j1])
    worst = max(np.abs(ex).max(initial=0.0), np.abs(ey).max(initial=0.0))
    return float(worst / G.grid.h)


def local_gauge_phase(F: LinkField2D, x0: Tuple[float, float], xt0: Tuple[float, float],
                      ell: float) -> LocalGauge:
    """phi with F - B0(xt0) A0(. - x0) - grad(phi) small on Q_ell(x0), via the L-shaped path from x0."""
    g = F.grid
    x0 = (float(x0[0]), float(x0[1]))
    if max(abs(xt0[0] - x0[0]), abs(xt0[1] - x0[1])) > 0.5 * ell + 1e-12:
        raise ValueError("reference point lies outside the closed square")
    edge = np.linspace(-0.5 * ell, 0.5 * ell, max(5, int(np.ceil(ell / g.h)) + 1))
    px = np.concatenate([x0[0] + edge, x0[0] + edge, np.full_like(edge, x0[0] - 0.5 * ell),
                         np.full_like(edge, x0[0] + 0.5 * ell)])
    py = np.concatenate([np.full_like(edge, x0[1] - 0.5 * ell), np.full_like(edge, x0[1] + 0.5 * ell),
                         x0[1] + edge, x0[1] + edge])
    if not np.all(g.contains(px, py)):
        raise ValueError(f"square of side {ell} at {x0} is not inside the domain")
    i0, i1, j0, j1 = (int(v) for v in g.square_index_range(x0[0], x0[1], ell))
    if i1 <= i0 or j1 <= j0:
        raise ValueError(f"square of side {ell} holds fewer than two nodes per side")

    B = curl(F)
    plaq = g.plaquette_mask()
    vg = B.grid
    PX, PY = np.meshgrid(vg.x, vg.y, indexing="ij")
    dist = np.where(plaq, (PX - xt0[0]) ** 2 + (PY - xt0[1]) ** 2, np.inf)
    field_value = float(B.values.flat[int(np.argmin(dist))])

    G = F - unit_field_links(g, x0).scaled(field_value)
    si, sj = g.nearest_node(*x0)
    si, sj = min(max(si, i0), i1), min(max(sj, j0), j1)
    phi = np.zeros(g.shape)
    row = np.zeros(g.nx)
    row[si + 1:i1 + 1] = np.cumsum(G.hx[si:i1, sj])
    row[i0:si] = -np.cumsum(G.hx[i0:si, sj][::-1])[::-1]
    phi[:, sj] = row
    up = np.cumsum(G.hy[i0:i1 + 1, sj:j1], axis=1)
    phi[i0:i1 + 1, sj + 1:j1 + 1] = row[i0:i1 + 1, None] + up
    down = np.cumsum(G.hy[i0:i1 + 1, j0:sj][:, ::-1], axis=1)[:, ::-1]
    phi[i0:i1 + 1, j0:sj] = row[i0:i1 + 1, None] - down
    mask = np.zeros(g.shape, dtype=bool)
    mask[i0:i1 + 1, j0:j1 + 1] = True
    phi = np.where(mask, phi, 0.0)
    box = (i0, i1, j0, j1)
    defect = _phase_defect(G, phi, box)
    logger.debug("local gauge at %s: B0(xt0)=%.4g, defect %.3e", x0, field_value, defect)
    return LocalGauge(ScalarField2D(g, phi), defect, mask, field_value, G, box)
