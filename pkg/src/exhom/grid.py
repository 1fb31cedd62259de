"""Structured-grid Q1 finite elements for T^{-1} u - div(A (xi + grad u)) = f.

Uniform tensor-product grids on axis-aligned rectangles, bilinear (Q1)
elements, 2x2 Gauss quadrature per cell, coefficient evaluated pointwise at
the quadrature points.  Boundary treatments: homogeneous Dirichlet or
periodic (with the zero-mean constraint realized by pinning one node when
the zero-order term vanishes).

Solvers are Krylov only: conjugate gradients for symmetric fields,
stabilized bi-conjugate gradients otherwise, both Jacobi preconditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coeffs import CoefficientField

__all__ = [
    "StructuredGrid",
    "SparseSystem",
    "DofVector",
    "SolverError",
    "assemble",
    "mass_matrix",
    "solve",
    "gradient_field",
]

_G = 1.0 / np.sqrt(3.0)
# reference-square [-1,1]^2 Gauss points, local node order (-,-),(+,-),(-,+),(+,+)
GAUSS_POINTS = np.array([[-_G, -_G], [_G, -_G], [-_G, _G], [_G, _G]])


def _shape_values(xi, eta):
    N = 0.25 * np.array(
        [(1 - xi) * (1 - eta), (1 + xi) * (1 - eta), (1 - xi) * (1 + eta), (1 + xi) * (1 + eta)]
    )
    dN = 0.25 * np.array(
        [
            [-(1 - eta), -(1 - xi)],
            [(1 - eta), -(1 + xi)],
            [-(1 + eta), (1 - xi)],
            [(1 + eta), (1 + xi)],
        ]
    )
    return N, dN


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform nx x ny cell grid on [x0, x0+nx*hx] x [y0, y0+ny*hy]."""

    x0: float
    y0: float
    nx: int
    ny: int
    hx: float
    hy: float

    @classmethod
    def square(cls, R: float, n: int, center=(0.0, 0.0)) -> "StructuredGrid":
        """The box Q_R = (-R, R)^2 shifted to `center`, n cells per dim."""
        if n < 2:
            raise ValueError("need n >= 2 cells per dimension")
        h = 2.0 * R / n
        return cls(center[0] - R, center[1] - R, n, n, h, h)

    @classmethod
    def from_box(cls, bounds, nx: int, ny: int) -> "StructuredGrid":
        x0, x1, y0, y1 = bounds
        if nx < 2 or ny < 2:
            raise ValueError("need at least 2 cells per dimension")
        return cls(x0, y0, nx, ny, (x1 - x0) / nx, (y1 - y0) / ny)

    # square-grid conveniences used throughout the corrector modules
    @property
    def n(self) -> int:
        if self.nx != self.ny:
            raise ValueError("grid is not square")
        return self.nx

    @property
    def h(self) -> float:
        return self.hx

    @property
    def R(self) -> float:
        """Half-width (square, origin-centered grids)."""
        return 0.5 * self.nx * self.hx

    @property
    def center(self):
        return (
            self.x0 + 0.5 * self.nx * self.hx,
            self.y0 + 0.5 * self.ny * self.hy,
        )

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    def node_coords(self):
        xs = self.x0 + self.hx * np.arange(self.nx + 1)
        ys = self.y0 + self.hy * np.arange(self.ny + 1)
        return xs, ys

    def cell_connectivity(self, bc: str) -> np.ndarray:
        """(ncells, 4) array of dof indices per cell, local order as GAUSS_POINTS."""
        I, J = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        if bc == "periodic":
            def dof(i, j):
                return (i % self.nx) * self.ny + (j % self.ny)
        elif bc == "dirichlet0":
            nyy = self.ny + 1

            def dof(i, j):
                return i * nyy + j
        else:
            raise ValueError(f"unknown bc {bc!r}")
        return np.stack(
            [dof(I, J).ravel(), dof(I + 1, J).ravel(), dof(I, J + 1).ravel(), dof(I + 1, J + 1).ravel()],
            axis=1,
        )

    def free_dofs(self, bc: str) -> np.ndarray:
        """Indices of unconstrained dofs within the bc's node numbering."""
        if bc == "periodic":
            return np.arange(self.nx * self.ny)
        nyy = self.ny + 1
        I, J = np.meshgrid(np.arange(1, self.nx), np.arange(1, self.ny), indexing="ij")
        return (I * nyy + J).ravel()

    def quad_points(self) -> np.ndarray:
        """(4*ncells, 2) coordinates of all 2x2 Gauss points, cell-major."""
        I, J = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        cx = self.x0 + (I.ravel() + 0.5) * self.hx
        cy = self.y0 + (J.ravel() + 0.5) * self.hy
        pts = np.empty((self.nx * self.ny, 4, 2))
        for gp in range(4):
            pts[:, gp, 0] = cx + 0.5 * self.hx * GAUSS_POINTS[gp, 0]
            pts[:, gp, 1] = cy + 0.5 * self.hy * GAUSS_POINTS[gp, 1]
        return pts.reshape(-1, 2)

    def quad_weight(self) -> float:
        """Quadrature weight of a single Gauss point (uniform on the grid)."""
        return 0.25 * self.hx * self.hy


@dataclass
class SparseSystem:
    """Assembled linear system on the free dofs."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool
    grid: StructuredGrid
    bc: str
    pinned: bool = False  # periodic singular system with node 0 removed


@dataclass
class DofVector:
    """Values on the free dofs of `grid` under boundary treatment `bc`."""

    values: np.ndarray
    grid: StructuredGrid
    bc: str
    pinned: bool = False

    def nodal(self) -> np.ndarray:
        """Expand to the full (nx+1, ny+1) nodal array."""
        g = self.grid
        if self.bc == "dirichlet0":
            out = np.zeros((g.nx + 1, g.ny + 1))
            inner = self.values.reshape(g.nx - 1, g.ny - 1)
            out[1:-1, 1:-1] = inner
            return out
        vals = self.values
        if self.pinned:
            vals = np.concatenate([[0.0], vals])
        per = vals.reshape(g.nx, g.ny)
        out = np.empty((g.nx + 1, g.ny + 1))
        out[: g.nx, : g.ny] = per
        out[g.nx, : g.ny] = per[0]
        out[:, g.ny] = out[:, 0]
        return out


def _quad_eval_field(grid: StructuredGrid, field: Optional[CoefficientField]):
    if field is None:
        return None
    return field(grid.quad_points()).reshape(grid.nx * grid.ny, 4, 2, 2)


def assemble(
    grid: StructuredGrid,
    field: CoefficientField,
    inv_T: float,
    xi: Optional[np.ndarray] = None,
    bc: str = "dirichlet0",
    source=None,
) -> SparseSystem:
    """Assemble T^{-1} u - div(A (xi + grad u)) = f in weak Q1 form.

    The right-hand side collects -int grad(psi) . A xi (when `xi` is given)
    and int f psi (when `source`, a callable on points, is given).

    For bc='periodic' with inv_T == 0 the constant null space is removed by
    pinning node 0; the system is marked `pinned` and solutions should be
    recentered by the caller when a zero-mean representative is wanted.
    """
    if inv_T < 0:
        raise ValueError("inv_T must be nonnegative")
    if bc not in ("dirichlet0", "periodic"):
        raise ValueError(f"unknown bc {bc!r}")

    conn = grid.cell_connectivity(bc)
    ncells = conn.shape[0]
    ndof_full = grid.nx * grid.ny if bc == "periodic" else (grid.nx + 1) * (grid.ny + 1)
    A_q = _quad_eval_field(grid, field)

    w = grid.quad_weight()
    Kloc = np.zeros((ncells, 4, 4))
    rhs_full = np.zeros(ndof_full)
    pts = None
    if source is not None:
        pts = grid.quad_points().reshape(ncells, 4, 2)

    for gp in range(4):
        N, dN = _shape_values(*GAUSS_POINTS[gp])
        dNdx = dN / np.array([0.5 * grid.hx, 0.5 * grid.hy])  # (4,2)
        Agp = A_q[:, gp]  # (ncells, 2, 2)
        # grad(psi_i) . A grad(psi_j): dNdx @ A @ dNdx^T with row = test index
        Kloc += w * np.einsum("ia,cab,jb->cij", dNdx, Agp, dNdx)
        if inv_T > 0.0:
            Kloc += inv_T * w * np.outer(N, N)[None, :, :]
        if xi is not None:
            Axi = Agp @ np.asarray(xi, dtype=float)  # (ncells, 2)
            np.add.at(rhs_full, conn, -w * Axi @ dNdx.T)
        if source is not None:
            fvals = np.asarray(source(pts[:, gp, :]), dtype=float)
            np.add.at(rhs_full, conn, w * fvals[:, None] * N[None, :])

    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    K = sp.coo_matrix((Kloc.ravel(), (rows, cols)), shape=(ndof_full, ndof_full)).tocsr()

    pinned = False
    if bc == "dirichlet0":
        free = grid.free_dofs(bc)
        Kf = K[free][:, free].tocsr()
        bf = rhs_full[free]
    else:
        if inv_T == 0.0:
            # remove the constant null space (zero-mean constraint via pinning)
            free = np.arange(1, ndof_full)
            Kf = K[free][:, free].tocsr()
            bf = rhs_full[free]
            pinned = True
        else:
            Kf = K
            bf = rhs_full
    return SparseSystem(
        matrix=Kf,
        rhs=bf,
        symmetric=bool(field.is_symmetric),
        grid=grid,
        bc=bc,
        pinned=pinned,
    )


def mass_matrix(grid: StructuredGrid, bc: str = "dirichlet0", pinned: bool = False) -> sp.csr_matrix:
    """Q1 consistent mass matrix on the free dofs (2x2 Gauss, exact)."""
    conn = grid.cell_connectivity(bc)
    ndof_full = grid.nx * grid.ny if bc == "periodic" else (grid.nx + 1) * (grid.ny + 1)
    w = grid.quad_weight()
    Mloc = np.zeros((4, 4))
    for gp in range(4):
        N, _ = _shape_values(*GAUSS_POINTS[gp])
        Mloc += w * np.outer(N, N)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = np.broadcast_to(Mloc, (conn.shape[0], 4, 4)).ravel()
    M = sp.coo_matrix((vals, (rows, cols)), shape=(ndof_full, ndof_full)).tocsr()
    if bc == "dirichlet0":
        free = grid.free_dofs(bc)
        return M[free][:, free].tocsr()
    if pinned:
        free = np.arange(1, ndof_full)
        return M[free][:, free].tocsr()
    return M


def solve(
    system: SparseSystem,
    rel_tol: float = 1e-10,
    max_iter: int = 50000,
    x0: Optional[np.ndarray] = None,
) -> DofVector:
    """Krylov solve to ||b - A x|| <= rel_tol ||b||.

    CG when the system is flagged symmetric, BiCGStab otherwise, both with
    Jacobi preconditioning.  A zero right-hand side short-circuits to the
    zero vector.  Raises SolverError carrying the achieved relative residual
    on non-convergence.
    """
    if not (0.0 < rel_tol <= 1e-4):
        raise ValueError("rel_tol must lie in (0, 1e-4]")
    b = system.rhs
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return DofVector(np.zeros_like(b), system.grid, system.bc, system.pinned)
    A = system.matrix
    M = sp.diags(1.0 / A.diagonal())
    krylov = spla.cg if system.symmetric else spla.bicgstab
    x = x0
    res = math.inf
    # scipy tracks a recursively updated residual that can drift a little
    # from the true one; restart from the current iterate until the true
    # relative residual meets the contract
    for attempt in range(4):
        kw = dict(rtol=rel_tol, atol=0.0, maxiter=max_iter, M=M)
        if x is not None:
            kw["x0"] = x
        x, info = krylov(A, b, **kw)
        res = float(np.linalg.norm(b - A @ x)) / bnorm
        if res <= rel_tol:
            return DofVector(x, system.grid, system.bc, system.pinned)
        if info < 0:
            break
    raise SolverError(
        f"Krylov solver did not reach rel_tol={rel_tol:g} (achieved {res:.3e})",
        residual=res,
    )


def gradient_field(u: DofVector) -> np.ndarray:
    """Gradient of the Q1 interpolant at all 2x2 Gauss points.

    Returns a (4 * ncells, 2) array ordered like `grid.quad_points()`.
    """
    g = u.grid
    nodal = u.nodal()
    I, J = np.meshgrid(np.arange(g.nx), np.arange(g.ny), indexing="ij")
    corners = np.stack(
        [
            nodal[I, J].ravel(),
            nodal[I + 1, J].ravel(),
            nodal[I, J + 1].ravel(),
            nodal[I + 1, J + 1].ravel(),
        ],
        axis=1,
    )  # (ncells, 4)
    out = np.empty((g.nx * g.ny, 4, 2))
    for gp in range(4):
        _, dN = _shape_values(*GAUSS_POINTS[gp])
        dNdx = dN / np.array([0.5 * g.hx, 0.5 * g.hy])
        out[:, gp, :] = corners @ dNdx
    return out.reshape(-1, 2)


def interpolate_gradient(u: DofVector, points: np.ndarray) -> np.ndarray:
    """Gradient of the Q1 interpolant of `u` at arbitrary points inside the grid."""
    g = u.grid
    nodal = u.nodal()
    pts = np.atleast_2d(points)
    fx = (pts[:, 0] - g.x0) / g.hx
    fy = (pts[:, 1] - g.y0) / g.hy
    i = np.clip(np.floor(fx).astype(int), 0, g.nx - 1)
    j = np.clip(np.floor(fy).astype(int), 0, g.ny - 1)
    # local coordinates in [-1, 1]
    xi = 2.0 * (fx - i) - 1.0
    eta = 2.0 * (fy - j) - 1.0
    c00 = nodal[i, j]
    c10 = nodal[i + 1, j]
    c01 = nodal[i, j + 1]
    c11 = nodal[i + 1, j + 1]
    dudxi = 0.25 * (-(1 - eta) * c00 + (1 - eta) * c10 - (1 + eta) * c01 + (1 + eta) * c11)
    dudeta = 0.25 * (-(1 - xi) * c00 - (1 + xi) * c10 + (1 - xi) * c01 + (1 + xi) * c11)
    return np.stack([dudxi / (0.5 * g.hx), dudeta / (0.5 * g.hy)], axis=-1)
