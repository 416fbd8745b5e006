#!/usr/bin/env python3
"""
Grids, fields and gauge-covariant stencils shared by every solver module.

Layout:
- Nodes are cell centres: node (i, j) sits at origin + ((i+1/2)h, (j+1/2)h).
  Arrays are indexed [i, j] with i running along x1.
- Horizontal links join (i, j)-(i+1, j), vertical links join (i, j)-(i, j+1).
  A link value is the line integral of A along the edge.
- The vertex grid (cell corners) carries plaquettes, curl and stream functions.

Notes:
- Neumann conditions are natural: a missing link contributes nothing.
- Dirichlet faces use the ghost value -u at distance h/2 outside the node.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

logger = logging.getLogger(__name__)

FACES = ("left", "right", "down", "up")
_FACE_NORMALS = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "down": (0.0, -1.0), "up": (0.0, 1.0)}
_GAUSS = 0.5 / np.sqrt(3.0)


class GridMismatchError(ValueError):
    """Fields, links or masks that do not live on the same grid."""


class NumericalFailure(RuntimeError):
    """A solver produced no usable result. `flag` names the originating check."""

    def __init__(self, message: str, flag: str = "numerical", residual: float = float("nan")):
        super().__init__(message)
        self.flag = flag
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Grid2D:
    nx: int
    ny: int
    h: float
    origin: Tuple[float, float] = (0.0, 0.0)
    inside: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"grid spacing must be positive, got {self.h}")
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4 cells per side, got {self.nx}x{self.ny}")
        if self.inside is None:
            mask = np.ones((self.nx, self.ny), dtype=bool)
        else:
            mask = np.array(self.inside, dtype=bool)
        if mask.shape != (self.nx, self.ny):
            raise ValueError(f"inside mask shape {mask.shape} != {(self.nx, self.ny)}")
        if not mask.any():
            raise ValueError("inside mask is empty")
        _, n_parts = ndimage.label(mask)
        if n_parts != 1:
            raise ValueError(f"inside mask has {n_parts} components, expected 1")
        _, n_outer = ndimage.label(np.pad(~mask, 1, constant_values=True), structure=np.ones((3, 3)))
        if n_outer != 1:
            raise ValueError("inside mask is not simply connected")
        mask.setflags(write=False)
        object.__setattr__(self, "inside", mask)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    # --- constructors ---------------------------------------------------------

    @classmethod
    def square(cls, n: int, side: float = 1.0, origin: Tuple[float, float] = (0.0, 0.0)) -> "Grid2D":
        return cls(n, n, side / n, origin)

    @classmethod
    def rectangle(cls, nx: int, ny: int, h: float, origin: Tuple[float, float] = (0.0, 0.0)) -> "Grid2D":
        return cls(nx, ny, h, origin)

    @classmethod
    def disk(cls, n: int, radius: float = 0.5, center: Tuple[float, float] = (0.5, 0.5)) -> "Grid2D":
        h = 2.0 * radius / n
        origin = (center[0] - radius, center[1] - radius)
        x = origin[0] + (np.arange(n) + 0.5) * h
        y = origin[1] + (np.arange(n) + 0.5) * h
        X, Y = np.meshgrid(x, y, indexing="ij")
        inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 < radius ** 2
        return cls(n, n, h, origin, inside)

    # --- geometry -------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def node_count(self) -> int:
        return int(self.inside.sum())

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.h

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.h

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the cell rectangle."""
        ox, oy = self.origin
        return ox, ox + self.nx * self.h, oy, oy + self.ny * self.h

    @property
    def diameter(self) -> float:
        X, Y = self.mesh()
        xs, ys = X[self.inside], Y[self.inside]
        return float(np.hypot(xs.max() - xs.min(), ys.max() - ys.min()) + self.h * np.sqrt(2.0))

    def matches(self, other: "Grid2D") -> bool:
        if other is self:
            return True
        return (self.nx == other.nx and self.ny == other.ny
                and np.isclose(self.h, other.h, rtol=1e-12, atol=0.0)
                and np.allclose(self.origin, other.origin, rtol=0.0, atol=1e-12 * max(1.0, self.h))
                and np.array_equal(self.inside, other.inside))

    def link_masks(self) -> Tuple[np.ndarray, np.ndarray]:
        ins = self.inside
        return ins[1:, :] & ins[:-1, :], ins[:, 1:] & ins[:, :-1]

    def missing_faces(self) -> Dict[str, np.ndarray]:
        """Per side, inside nodes whose neighbour there is outside Ω."""
        pad = np.pad(self.inside, 1, constant_values=False)
        core = self.inside
        return {
            "left": core & ~pad[:-2, 1:-1],
            "right": core & ~pad[2:, 1:-1],
            "down": core & ~pad[1:-1, :-2],
            "up": core & ~pad[1:-1, 2:],
        }

    @property
    def boundary_mask(self) -> np.ndarray:
        faces = self.missing_faces()
        return faces["left"] | faces["right"] | faces["down"] | faces["up"]

    @property
    def boundary_nodes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indices k x 2, outward unit normals k x 2, corner flags k)."""
        faces = self.missing_faces()
        normal = np.zeros((self.nx, self.ny, 2))
        for name in FACES:
            normal[faces[name]] += _FACE_NORMALS[name]
        mask = self.boundary_mask
        idx = np.argwhere(mask)
        nrm = normal[mask]
        length = np.linalg.norm(nrm, axis=1)
        # nodes with opposite missing faces (one-cell necks) get no direction
        safe = np.where(length > 0, length, 1.0)
        nrm = nrm / safe[:, None]
        corner = ((faces["left"] | faces["right"]) & (faces["down"] | faces["up"]))[mask]
        return idx, nrm, corner

    def contains(self, px, py) -> np.ndarray:
        """True where every closed cell containing the point is inside."""
        px = np.atleast_1d(np.asarray(px, dtype=float))
        py = np.atleast_1d(np.asarray(py, dtype=float))
        eps = 1e-9
        fx = (px - self.origin[0]) / self.h
        fy = (py - self.origin[1]) / self.h
        result = np.ones(px.shape, dtype=bool)
        for ix in (np.floor(fx - eps), np.floor(fx + eps)):
            for iy in (np.floor(fy - eps), np.floor(fy + eps)):
                ok = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
                ii = np.clip(ix, 0, self.nx - 1).astype(int)
                jj = np.clip(iy, 0, self.ny - 1).astype(int)
                result &= ok & self.inside[ii, jj]
        return result

    def nearest_node(self, px: float, py: float) -> Tuple[int, int]:
        i = int(np.clip(np.floor((px - self.origin[0]) / self.h), 0, self.nx - 1))
        j = int(np.clip(np.floor((py - self.origin[1]) / self.h), 0, self.ny - 1))
        return i, j

    def square_index_range(self, cx, cy, ell: float):
        """Index bounds (i0, i1, j0, j1) of nodes in the closed square of side ell centred at (cx, cy).
        Vectorized; empty ranges have i0 > i1."""
        cx = np.asarray(cx, dtype=float)
        cy = np.asarray(cy, dtype=float)
        eps = 1e-9
        i0 = np.ceil((cx - 0.5 * ell - self.origin[0]) / self.h - 0.5 - eps).astype(int)
        i1 = np.floor((cx + 0.5 * ell - self.origin[0]) / self.h - 0.5 + eps).astype(int)
        j0 = np.ceil((cy - 0.5 * ell - self.origin[1]) / self.h - 0.5 - eps).astype(int)
        j1 = np.floor((cy + 0.5 * ell - self.origin[1]) / self.h - 0.5 + eps).astype(int)
        return (np.clip(i0, 0, self.nx), np.clip(i1, -1, self.nx - 1),
                np.clip(j0, 0, self.ny), np.clip(j1, -1, self.ny - 1))

    # --- dual grid ------------------------------------------------------------

    def vertex_grid(self) -> "Grid2D":
        """Cell corners as nodes; a corner is inside when it touches an inside cell."""
        c00, c10, c01, c11 = _corner_views(self.inside)
        touched = c00 | c10 | c01 | c11
        origin = (self.origin[0] - 0.5 * self.h, self.origin[1] - 0.5 * self.h)
        return Grid2D(self.nx + 1, self.ny + 1, self.h, origin, touched)

    def plaquette_mask(self) -> np.ndarray:
        """Corners whose four surrounding cells are all inside, shape (nx+1, ny+1)."""
        c00, c10, c01, c11 = _corner_views(self.inside)
        return c00 & c10 & c01 & c11


def _corner_views(cells: np.ndarray):
    """The four cells around every corner (p, q): (p-1,q-1), (p,q-1), (p-1,q), (p,q)."""
    pad = np.pad(cells, 1)
    return pad[:-1, :-1], pad[1:, :-1], pad[:-1, 1:], pad[1:, 1:]


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("scalar field has non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid2D, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ScalarField2D":
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(np.asarray(fn(X, Y), dtype=float), grid.shape))

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "ScalarField2D":
        return cls(grid, np.full(grid.shape, float(value)))

    def sup(self) -> float:
        return float(self.values[self.grid.inside].max())

    def inf(self) -> float:
        return float(self.values[self.grid.inside].min())


@dataclass(frozen=True, eq=False)
class ComplexField2D:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("complex field has non-finite values")
        vals = np.where(self.grid.inside, vals, 0.0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ComplexField2D":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    def modulus_squared(self) -> ScalarField2D:
        return ScalarField2D(self.grid, np.abs(self.values) ** 2)

    def conj(self) -> "ComplexField2D":
        return ComplexField2D(self.grid, np.conj(self.values))


@dataclass(frozen=True, eq=False)
class LinkField2D:
    """Edge integrals of a vector potential: hx has shape (nx-1, ny), hy (nx, ny-1)."""
    grid: Grid2D
    hx: np.ndarray
    hy: np.ndarray

    def __post_init__(self):
        g = self.grid
        hx = np.array(self.hx, dtype=float)
        hy = np.array(self.hy, dtype=float)
        if hx.shape != (g.nx - 1, g.ny) or hy.shape != (g.nx, g.ny - 1):
            raise GridMismatchError(f"link shapes {hx.shape}, {hy.shape} do not fit grid {g.shape}")
        if not (np.all(np.isfinite(hx)) and np.all(np.isfinite(hy))):
            raise ValueError("link field has non-finite phases")
        mx, my = g.link_masks()
        hx = np.where(mx, hx, 0.0)
        hy = np.where(my, hy, 0.0)
        hx.setflags(write=False)
        hy.setflags(write=False)
        object.__setattr__(self, "hx", hx)
        object.__setattr__(self, "hy", hy)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "LinkField2D":
        return cls(grid, np.zeros((grid.nx - 1, grid.ny)), np.zeros((grid.nx, grid.ny - 1)))

    def __add__(self, other: "LinkField2D") -> "LinkField2D":
        _require_same_grid(self.grid, other.grid)
        return LinkField2D(self.grid, self.hx + other.hx, self.hy + other.hy)

    def __sub__(self, other: "LinkField2D") -> "LinkField2D":
        _require_same_grid(self.grid, other.grid)
        return LinkField2D(self.grid, self.hx - other.hx, self.hy - other.hy)

    def scaled(self, factor: float) -> "LinkField2D":
        return LinkField2D(self.grid, factor * self.hx, factor * self.hy)


Field = Union[ScalarField2D, ComplexField2D]


def _require_same_grid(g1: Grid2D, g2: Grid2D):
    if not g1.matches(g2):
        raise GridMismatchError("operands live on different grids")


def _resolve_mask(grid: Grid2D, mask) -> np.ndarray:
    if mask is None:
        return grid.inside
    if isinstance(mask, ScalarField2D):
        _require_same_grid(grid, mask.grid)
        mask = mask.values != 0
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise GridMismatchError(f"mask shape {mask.shape} != grid shape {grid.shape}")
    return mask & grid.inside


# --- quadrature -----------------------------------------------------------------

def integrate(f: Field, mask=None) -> float:
    """Midpoint rule h^2 * sum of f over the masked inside nodes."""
    m = _resolve_mask(f.grid, mask)
    return float(f.grid.h ** 2 * np.sum(f.values[m]))


def sublevel_masks(a: ScalarField2D) -> Tuple[np.ndarray, np.ndarray]:
    inside = a.grid.inside
    pos = inside & (a.values > 0)
    return pos, inside & ~pos


def count_boundary_squares(a: ScalarField2D, ell: float) -> int:
    """Lattice squares Q_ell(gamma), gamma in ell*Z^2 inside Omega, that see both signs of a."""
    g = a.grid
    if ell < 2.0 * g.h:
        raise ValueError(f"square side {ell} below 2h = {2.0 * g.h}: cannot resolve")
    if not 0 < ell < g.diameter:
        raise ValueError(f"square side {ell} outside (0, diameter={g.diameter:.4g})")
    xmin, xmax, ymin, ymax = g.bounds
    kx = np.arange(np.ceil(xmin / ell), np.floor(xmax / ell) + 1)
    ky = np.arange(np.ceil(ymin / ell), np.floor(ymax / ell) + 1)
    GX, GY = np.meshgrid(kx * ell, ky * ell, indexing="ij")
    gx, gy = GX.ravel(), GY.ravel()
    keep = g.contains(gx, gy)
    gx, gy = gx[keep], gy[keep]
    if gx.size == 0:
        return 0
    pos, nonpos = sublevel_masks(a)
    n_pos = box_counts(pos, *g.square_index_range(gx, gy, ell))
    n_neg = box_counts(nonpos, *g.square_index_range(gx, gy, ell))
    return int(np.count_nonzero((n_pos > 0) & (n_neg > 0)))


def box_counts(mask: np.ndarray, i0, i1, j0, j1) -> np.ndarray:
    """Number of True entries of mask in index boxes [i0..i1] x [j0..j1] (summed-area table)."""
    table = np.pad(mask.astype(np.int64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    i0, i1, j0, j1 = (np.asarray(v) for v in (i0, i1, j0, j1))
    empty = (i1 < i0) | (j1 < j0)
    a0, a1 = np.where(empty, 0, i0), np.where(empty, 0, i1 + 1)
    b0, b1 = np.where(empty, 0, j0), np.where(empty, 0, j1 + 1)
    counts = table[a1, b1] - table[a0, b1] - table[a1, b0] + table[a0, b0]
    return np.where(empty, 0, counts)


# --- links and covariant stencils ------------------------------------------------

def link_phases_from_potential(grid: Grid2D, potential: Callable[[np.ndarray, np.ndarray], Tuple]) -> LinkField2D:
    """Edge integrals of A = potential(x, y) by two-point Gauss quadrature."""
    x, y, h = grid.x, grid.y, grid.h
    XH, YH = np.meshgrid(x[:-1], y, indexing="ij")
    hx = np.zeros_like(XH)
    for t in (0.5 - _GAUSS, 0.5 + _GAUSS):
        hx += 0.5 * h * np.asarray(potential(XH + t * h, YH)[0], dtype=float)
    XV, YV = np.meshgrid(x, y[:-1], indexing="ij")
    hy = np.zeros_like(XV)
    for t in (0.5 - _GAUSS, 0.5 + _GAUSS):
        hy += 0.5 * h * np.asarray(potential(XV, YV + t * h)[1], dtype=float)
    return LinkField2D(grid, np.broadcast_to(hx, XH.shape), np.broadcast_to(hy, XV.shape))


def gradient_links(grid: Grid2D, chi: np.ndarray) -> LinkField2D:
    chi = np.asarray(chi, dtype=float)
    return LinkField2D(grid, chi[1:, :] - chi[:-1, :], chi[:, 1:] - chi[:, :-1])


def _link_terms(psi: np.ndarray, A: LinkField2D, coupling: float):
    mx, my = A.grid.link_masks()
    wx = np.exp(-1j * coupling * A.hx)
    wy = np.exp(-1j * coupling * A.hy)
    dx = np.where(mx, psi[1:, :] * wx - psi[:-1, :], 0.0)
    dy = np.where(my, psi[:, 1:] * wy - psi[:, :-1], 0.0)
    return dx, dy, wx, wy


def _values(psi) -> np.ndarray:
    return psi.values if isinstance(psi, ComplexField2D) else np.asarray(psi, dtype=complex)


def covariant_energy_density(psi: ComplexField2D, A: LinkField2D, coupling: float) -> ScalarField2D:
    """|psi_k e^{-i c theta} - psi_j|^2 / h^2 per forward link, booked on the lower node."""
    _require_same_grid(psi.grid, A.grid)
    dx, dy, _, _ = _link_terms(psi.values, A, coupling)
    dens = np.zeros(psi.grid.shape)
    dens[:-1, :] += np.abs(dx) ** 2
    dens[:, :-1] += np.abs(dy) ** 2
    return ScalarField2D(psi.grid, dens / psi.grid.h ** 2)


def kinetic_energy(psi, A: LinkField2D, coupling: float) -> float:
    """Discrete integral of |(grad - i c A) psi|^2."""
    dx, dy, _, _ = _link_terms(_values(psi), A, coupling)
    return float(np.sum(np.abs(dx) ** 2) + np.sum(np.abs(dy) ** 2))


def kinetic_energy_and_laplacian(psi, A: LinkField2D, coupling: float) -> Tuple[float, np.ndarray]:
    """Kinetic integral and L psi, where <psi, L psi> equals that integral (no 1/h^2 in L)."""
    dx, dy, wx, wy = _link_terms(_values(psi), A, coupling)
    out = np.zeros(A.grid.shape, dtype=complex)
    out[:-1, :] -= dx
    out[1:, :] += np.conj(wx) * dx
    out[:, :-1] -= dy
    out[:, 1:] += np.conj(wy) * dy
    return float(np.sum(np.abs(dx) ** 2) + np.sum(np.abs(dy) ** 2)), out


def covariant_laplacian(psi, A: LinkField2D, coupling: float) -> np.ndarray:
    return kinetic_energy_and_laplacian(psi, A, coupling)[1]


def link_current(psi, A: LinkField2D, coupling: float) -> Tuple[np.ndarray, np.ndarray]:
    """Im(conj(psi_j) psi_k e^{-i c theta}) per link, zero on inactive links."""
    vals = _values(psi)
    mx, my = A.grid.link_masks()
    jx = np.imag(np.conj(vals[:-1, :]) * vals[1:, :] * np.exp(-1j * coupling * A.hx))
    jy = np.imag(np.conj(vals[:, :-1]) * vals[:, 1:] * np.exp(-1j * coupling * A.hy))
    return np.where(mx, jx, 0.0), np.where(my, jy, 0.0)


def node_index(grid: Grid2D) -> np.ndarray:
    """Map (i, j) -> row of the inside-node ordering, -1 outside."""
    index = -np.ones(grid.shape, dtype=np.int64)
    index[grid.inside] = np.arange(grid.node_count)
    return index


def covariant_matrix(grid: Grid2D, A: Optional[LinkField2D], coupling: float,
                     dirichlet: Iterable[str] = ()) -> sp.csr_matrix:
    """Sparse Hermitian -(grad - i c A)^2 over inside nodes, Neumann unless a side is listed."""
    if A is None:
        A = LinkField2D.zeros(grid)
    _require_same_grid(grid, A.grid)
    index = node_index(grid)
    mx, my = grid.link_masks()
    rows, cols, vals = [], [], []
    degree = np.zeros(grid.shape)
    for mask, phases, sl_lo, sl_hi in (
        (mx, A.hx, (slice(None, -1), slice(None)), (slice(1, None), slice(None))),
        (my, A.hy, (slice(None), slice(None, -1)), (slice(None), slice(1, None))),
    ):
        lo = index[sl_lo][mask]
        hi = index[sl_hi][mask]
        w = np.exp(-1j * coupling * phases[mask])
        rows += [lo, hi]
        cols += [hi, lo]
        vals += [-w, -np.conj(w)]
        degree[sl_lo] += mask
        degree[sl_hi] += mask
    faces = grid.missing_faces()
    for side in dirichlet:
        if side not in faces:
            raise ValueError(f"unknown face {side!r}, expected one of {FACES}")
        degree += 2.0 * faces[side]
    n = grid.node_count
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(degree[grid.inside].astype(complex))
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return (mat.tocsr() / grid.h ** 2).astype(complex)


def vertex_average(f: ScalarField2D) -> ScalarField2D:
    """Average of the inside cells around each corner, on grid.vertex_grid()."""
    g = f.grid
    vals = np.where(g.inside, f.values, 0.0)
    total = sum(_corner_views(vals))
    count = sum(v.astype(float) for v in _corner_views(g.inside))
    return ScalarField2D(g.vertex_grid(), np.where(count > 0, total / np.maximum(count, 1.0), 0.0))


# --- serialization ----------------------------------------------------------------

_HEADER = struct.Struct("<4sHHd")
_MAGIC = {"real": b"GLFR", "complex": b"GLFC", "links": b"GLFL"}


def write_field_csv(field: Field, path) -> Path:
    path = Path(path)
    g = field.grid
    X, Y = g.mesh()
    m = g.inside
    if isinstance(field, ComplexField2D):
        data = np.column_stack([X[m], Y[m], field.values[m].real, field.values[m].imag])
        header = "x,y,re,im"
    else:
        data = np.column_stack([X[m], Y[m], field.values[m]])
        header = "x,y,value"
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def read_field_csv(path, grid: Grid2D) -> Field:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    i = np.rint((data[:, 0] - grid.origin[0]) / grid.h - 0.5).astype(int)
    j = np.rint((data[:, 1] - grid.origin[1]) / grid.h - 0.5).astype(int)
    if np.any((i < 0) | (i >= grid.nx) | (j < 0) | (j >= grid.ny)):
        raise GridMismatchError(f"{path.name}: coordinates fall outside the grid")
    if header[2:] == ["re", "im"]:
        vals = np.zeros(grid.shape, dtype=complex)
        vals[i, j] = data[:, 2] + 1j * data[:, 3]
        return ComplexField2D(grid, vals)
    vals = np.zeros(grid.shape)
    vals[i, j] = data[:, 2]
    return ScalarField2D(grid, vals)


def write_field_binary(field: Field, path) -> Path:
    path = Path(path)
    g = field.grid
    if isinstance(field, ComplexField2D):
        magic, body = _MAGIC["complex"], np.ascontiguousarray(field.values, dtype="<c16")
    else:
        magic, body = _MAGIC["real"], np.ascontiguousarray(field.values, dtype="<f8")
    path.write_bytes(_HEADER.pack(magic, g.nx, g.ny, g.h) + body.tobytes())
    return path


def read_field_binary(path, grid: Optional[Grid2D] = None) -> Field:
    raw = Path(path).read_bytes()
    magic, nx, ny, h = _HEADER.unpack_from(raw)
    if grid is None:
        grid = Grid2D.rectangle(nx, ny, h)
    elif (nx, ny) != grid.shape or not np.isclose(h, grid.h):
        raise GridMismatchError(f"binary header {nx}x{ny}, h={h} does not match grid")
    if magic == _MAGIC["complex"]:
        vals = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(nx, ny)
        return ComplexField2D(grid, vals)
    if magic == _MAGIC["real"]:
        vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(nx, ny)
        return ScalarField2D(grid, vals)
    raise ValueError(f"unknown field magic {magic!r}")


def write_links_binary(A: LinkField2D, path) -> Path:
    path = Path(path)
    g = A.grid
    body = np.concatenate([A.hx.ravel(), A.hy.ravel()]).astype("<f8")
    path.write_bytes(_HEADER.pack(_MAGIC["links"], g.nx, g.ny, g.h) + body.tobytes())
    return path


def read_links_binary(path, grid: Grid2D) -> LinkField2D:
    raw = Path(path).read_bytes()
    magic, nx, ny, h = _HEADER.unpack_from(raw)
    if magic != _MAGIC["links"]:
        raise ValueError(f"not a link file: magic {magic!r}")
    if (nx, ny) != grid.shape or not np.isclose(h, grid.h):
        raise GridMismatchError(f"link header {nx}x{ny}, h={h} does not match grid")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    split = (nx - 1) * ny
    return LinkField2D(grid, body[:split].reshape(nx - 1, ny), body[split:].reshape(nx, ny - 1))
