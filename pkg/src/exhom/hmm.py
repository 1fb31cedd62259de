"""Coarse multiscale solver with regularized/extrapolated local cell problems.

Pipeline, per coarse P1 triangle on a rectangular domain D:

1. solve local correctors on an oversampled axis-aligned patch around the
   element centroid (half-width delta*H/2, clipped to D) with zero-order
   coefficient (T eps^2)^{-1}, for xi = e1, e2 (plus duals when the field is
   non-symmetric), Richardson-extrapolated over the dyadic T ladder;
2. form the projected filtered tensor over the inner window of half-width
   H/2 with clipped-mass normalization, giving a piecewise-constant
   effective coefficient (elements whose patch exits D copy the tensor of
   the nearest fully interior element, single hop);
3. solve the coarse P1 problem with that coefficient;
4. reconstruct fine-scale gradients with numerical correctors driven by the
   element averages of the coarse gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .averaging import Filter, _tensor_from_gradients, build_filter
from .coeffs import CoefficientField
from .corrector import richardson_combine
from .grid import (
    DofVector,
    SolverError,
    SparseSystem,
    StructuredGrid,
    assemble,
    gradient_field,
    interpolate_gradient,
    solve,
)

__all__ = [
    "CoarseMesh",
    "LocalTensorMap",
    "NumericalCorrectorSet",
    "scaled_field",
    "local_tensor",
    "build_tensor_map",
    "coarse_solve",
    "P1Function",
    "numerical_corrector",
    "hmm_solve",
    "fine_reference",
    "h1_distance",
]


def scaled_field(field: CoefficientField, eps: float) -> CoefficientField:
    """The eps-scale field x -> A(x / eps)."""
    base = field.evaluate

    def evaluate(points):
        return base(np.asarray(points, dtype=float) / eps)

    period = None if field.period is None else eps * np.asarray(field.period)
    return CoefficientField(
        evaluate=evaluate,
        is_symmetric=field.is_symmetric,
        period=period,
        alpha_hint=field.alpha_hint,
        beta_hint=field.beta_hint,
        name=f"{field.name}@eps={eps:g}",
        profile=field.profile,
    )


@dataclass
class CoarseMesh:
    """Conforming P1 triangulation of the rectangle [0,ax] x [0,ay]."""

    vertices: np.ndarray  # (Nv, 2)
    triangles: np.ndarray  # (Nt, 3)
    H: float
    extent: tuple
    boundary_vertices: np.ndarray  # bool mask (Nv,)

    @classmethod
    def rectangle(cls, ax: float, ay: float, H: float) -> "CoarseMesh":
        nx = max(1, int(round(ax / H)))
        ny = max(1, int(round(ay / H)))
        hx, hy = ax / nx, ay / ny
        xs = np.linspace(0.0, ax, nx + 1)
        ys = np.linspace(0.0, ay, ny + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        verts = np.stack([X.ravel(), Y.ravel()], axis=1)
        vid = lambda i, j: i * (ny + 1) + j
        tris = []
        for i in range(nx):
            for j in range(ny):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                tris.append([v00, v10, v11])  # lower (below the diagonal)
                tris.append([v00, v11, v01])  # upper
        tris = np.array(tris, dtype=int)
        bmask = (
            np.isclose(verts[:, 0], 0.0)
            | np.isclose(verts[:, 0], ax)
            | np.isclose(verts[:, 1], 0.0)
            | np.isclose(verts[:, 1], ay)
        )
        return cls(vertices=verts, triangles=tris, H=max(hx, hy), extent=(ax, ay), boundary_vertices=bmask)

    @classmethod
    def unit_square(cls, H: float) -> "CoarseMesh":
        return cls.rectangle(1.0, 1.0, H)

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e = [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]]
        return np.max([np.linalg.norm(v, axis=1) for v in e], axis=0)

    def basis_gradients(self):
        """(Nt, 3, 2) gradients of the barycentric basis functions."""
        p = self.vertices[self.triangles]
        out = np.empty((self.n_elements, 3, 2))
        for loc in range(3):
            a = p[:, (loc + 1) % 3]
            b = p[:, (loc + 2) % 3]
            # grad of the linear function that is 1 at p[loc], 0 at a, b
            edge = b - a
            normal = np.stack([-edge[:, 1], edge[:, 0]], axis=1)
            denom = np.einsum("ij,ij->i", p[:, loc] - a, normal)
            out[:, loc, :] = normal / denom[:, None]
        return out

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Element index containing each point (structured crisscross mesh)."""
        ax, ay = self.extent
        nx = int(round(ax / self.H))
        ny = int(round(ay / self.H))
        hx, hy = ax / nx, ay / ny
        pts = np.atleast_2d(points)
        i = np.clip((pts[:, 0] / hx).astype(int), 0, nx - 1)
        j = np.clip((pts[:, 1] / hy).astype(int), 0, ny - 1)
        lx = pts[:, 0] / hx - i
        ly = pts[:, 1] / hy - j
        lower = ly <= lx
        return 2 * (i * ny + j) + (~lower).astype(int)


@dataclass
class LocalTensorMap:
    """Per-element effective tensors with provenance."""

    tensors: np.ndarray  # (Nt, 2, 2)
    provenance: list  # 'computed' | 'copied-from-interior'
    donors: np.ndarray  # donor element index (self for computed)
    params: dict


@dataclass
class NumericalCorrectorSet:
    """Per-element local solutions and the reconstructed gradient pieces."""

    gammas: list  # per element: list of DofVector (e1, e2 directions)
    grids: list  # per element patch grid
    M: np.ndarray  # (Nt, 2) element averages of the coarse gradient
    kprime: int


class P1Function:
    """A coarse P1 field with point evaluation and per-element gradients."""

    def __init__(self, mesh: CoarseMesh, values: np.ndarray):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)
        self._grads = np.einsum(
            "ti,tid->td", self.values[mesh.triangles], mesh.basis_gradients()
        )

    def element_gradients(self) -> np.ndarray:
        return self._grads

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        elems = self.mesh.locate(pts)
        tri = self.mesh.triangles[elems]
        p = self.mesh.vertices[tri]
        v = self.values[tri]
        # barycentric coordinates
        d = p[:, 1:, :] - p[:, :1, :]
        rhs = pts - p[:, 0, :]
        det = d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]
        l1 = (rhs[:, 0] * d[:, 1, 1] - rhs[:, 1] * d[:, 1, 0]) / det
        l2 = (rhs[:, 1] * d[:, 0, 0] - rhs[:, 0] * d[:, 0, 1]) / det
        l0 = 1.0 - l1 - l2
        return l0 * v[:, 0] + l1 * v[:, 1] + l2 * v[:, 2]

    def gradient_at(self, points: np.ndarray) -> np.ndarray:
        elems = self.mesh.locate(np.atleast_2d(points))
        return self._grads[elems]


def _patch_grid(center, half_width: float, extent, h: float) -> StructuredGrid:
    """Structured grid on box(center, half_width) clipped to the domain."""
    ax, ay = extent
    x0, x1 = max(0.0, center[0] - half_width), min(ax, center[0] + half_width)
    y0, y1 = max(0.0, center[1] - half_width), min(ay, center[1] + half_width)
    nx = max(2, int(round((x1 - x0) / h)))
    ny = max(2, int(round((y1 - y0) / h)))
    if (x1 - x0) < 2 * h or (y1 - y0) < 2 * h:
        raise ValueError("oversampling patch smaller than two fine cells")
    return StructuredGrid.from_box((x0, x1, y0, y1), nx, ny)


def _patch_correctors(
    grid: StructuredGrid,
    field_eps: CoefficientField,
    inv_T0: float,
    k: int,
    rel_tol: float,
    dual: bool = False,
):
    """Extrapolated patch correctors for xi = e1, e2 (gradient samples)."""
    eff = field_eps.transpose() if dual else field_eps
    grads = []
    for d in range(2):
        xi = np.eye(2)[d]
        base = []
        x0 = None
        for j in range(k):
            system = assemble(grid, eff, inv_T0 / 2.0**j, xi=xi, bc="dirichlet0")
            u = solve(system, rel_tol=rel_tol, x0=x0)
            base.append(u.values)
            x0 = base[-1].copy()
        vals = richardson_combine(base) if k > 1 else base[0]
        grads.append(gradient_field(DofVector(vals, grid, "dirichlet0")))
    return grads


def local_tensor(
    centroid,
    field_eps: CoefficientField,
    eps: float,
    H: float,
    T: float,
    k: int,
    delta: float,
    h: float,
    filt: Filter,
    extent=(1.0, 1.0),
    rel_tol: float = 1e-8,
) -> np.ndarray:
    """Projected filtered tensor of one oversampled patch problem.

    Zero-order coefficient (T eps^2)^{-1}; averaging window of half-width
    H/2 centered at the element centroid, clipped-mass normalized.
    """
    grid = _patch_grid(centroid, 0.5 * delta * H, extent, h)
    inv_T0 = 1.0 / (T * eps * eps)
    gp = _patch_correctors(grid, field_eps, inv_T0, k, rel_tol)
    gd = gp if field_eps.is_symmetric else _patch_correctors(grid, field_eps, inv_T0, k, rel_tol, dual=True)
    mat, _, _, _ = _tensor_from_gradients(
        grid, field_eps, gp, gd, filt, 0.5 * H, project=True, center=tuple(centroid)
    )
    return mat


def build_tensor_map(
    mesh: CoarseMesh,
    field_eps: CoefficientField,
    eps: float,
    T: float,
    k: int,
    delta: float,
    h: float,
    filt: Filter,
    rel_tol: float = 1e-8,
) -> LocalTensorMap:
    """Per-element tensors with boundary elements copying interior donors.

    An element is 'interior' when its oversampled patch lies inside D.  If
    no element is interior (very coarse meshes), every tensor is computed on
    its clipped patch instead, which is the generic clipped-window form of
    the approximation.
    """
    ax, ay = mesh.extent
    cents = mesh.centroids()
    half = 0.5 * delta * mesh.H
    inside = (
        (cents[:, 0] - half >= -1e-12)
        & (cents[:, 0] + half <= ax + 1e-12)
        & (cents[:, 1] - half >= -1e-12)
        & (cents[:, 1] + half <= ay + 1e-12)
    )
    nt = mesh.n_elements
    tensors = np.zeros((nt, 2, 2))
    provenance = ["computed"] * nt
    donors = np.arange(nt)
    compute_set = np.where(inside)[0] if np.any(inside) else np.arange(nt)
    for e in compute_set:
        tensors[e] = local_tensor(
            cents[e], field_eps, eps, mesh.H, T, k, delta, h, filt,
            extent=mesh.extent, rel_tol=rel_tol,
        )
    if np.any(inside):
        interior = np.where(inside)[0]
        for e in np.where(~inside)[0]:
            d = interior[np.argmin(np.linalg.norm(cents[interior] - cents[e], axis=1))]
            tensors[e] = tensors[d]
            provenance[e] = "copied-from-interior"
            donors[e] = d
    params = dict(eps=eps, H=mesh.H, T=T, k=k, delta=delta, h=h, p=filt.order)
    return LocalTensorMap(tensors=tensors, provenance=provenance, donors=donors, params=params)


def coarse_solve(
    mesh: CoarseMesh,
    tensors: LocalTensorMap | np.ndarray,
    f: Callable[[np.ndarray], np.ndarray],
    rel_tol: float = 1e-10,
) -> P1Function:
    """P1 Galerkin solve of -div(A_H grad u) = f with zero boundary values.

    `tensors` is a LocalTensorMap or an (Nt, 2, 2) array.  Every element
    tensor must have a positive-definite symmetric part; offenders are
    reported together (the non-symmetric extrapolation 'ellipticity defect'
    case).
    """
    A = tensors.tensors if isinstance(tensors, LocalTensorMap) else np.asarray(tensors)
    if A.ndim == 2:
        A = np.broadcast_to(A, (mesh.n_elements, 2, 2))
    sym = 0.5 * (A + np.swapaxes(A, -1, -2))
    eigs = np.linalg.eigvalsh(sym)
    bad = np.where(eigs[:, 0] <= 0.0)[0]
    if bad.size:
        raise ValueError(
            f"non-elliptic element tensors (min sym eig <= 0) on elements {bad.tolist()}"
        )

    grads = mesh.basis_gradients()
    areas = mesh.areas()
    tri = mesh.triangles
    nv = mesh.vertices.shape[0]
    Kloc = np.einsum("t,tia,tab,tjb->tij", areas, grads, A, grads)
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    K = sp.coo_matrix((Kloc.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()

    # 3-point edge-midpoint rule, exact for quadratic loads
    p = mesh.vertices[tri]
    rhs = np.zeros(nv)
    mids = [(0, 1), (1, 2), (2, 0)]
    for a, b in mids:
        mp = 0.5 * (p[:, a] + p[:, b])
        fv = np.asarray(f(mp), dtype=float)
        contrib = areas / 3.0 * fv * 0.5
        np.add.at(rhs, tri[:, a], contrib)
        np.add.at(rhs, tri[:, b], contrib)

    free = np.where(~mesh.boundary_vertices)[0]
    Kf = K[free][:, free].tocsr()
    symmetric = bool(np.allclose(A, np.swapaxes(A, -1, -2), atol=1e-12))
    sysm = SparseSystem(
        matrix=Kf, rhs=rhs[free], symmetric=symmetric,
        grid=StructuredGrid.from_box((0, 1, 0, 1), 2, 2), bc="dirichlet0",
    )
    uf = solve(sysm, rel_tol=rel_tol)
    vals = np.zeros(nv)
    vals[free] = uf.values
    return P1Function(mesh, vals)


def numerical_corrector(
    mesh: CoarseMesh,
    u_coarse: P1Function,
    field_eps: CoefficientField,
    eps: float,
    T: float,
    kprime: int,
    delta: float,
    h: float,
    rel_tol: float = 1e-8,
) -> NumericalCorrectorSet:
    """Local reconstructions gamma_i driving the corrector C.

    Each element solves, on its clipped oversampled patch,

        (T eps^2)^{-1} gamma - div(A_eps (M_i + grad gamma)) = 0,

    with M_i the element average of the coarse gradient; by linearity the
    e1/e2 direction solves are combined with the components of M_i.
    """
    inv_T0 = 1.0 / (T * eps * eps)
    M = u_coarse.element_gradients()
    cents = mesh.centroids()
    gammas, grids = [], []
    for e in range(mesh.n_elements):
        grid = _patch_grid(cents[e], 0.5 * delta * mesh.H, mesh.extent, h)
        per_dir = []
        for d in range(2):
            xi = np.eye(2)[d]
            base = []
            x0 = None
            for j in range(kprime):
                system = assemble(grid, field_eps, inv_T0 / 2.0**j, xi=xi, bc="dirichlet0")
                u = solve(system, rel_tol=rel_tol, x0=x0)
                base.append(u.values)
                x0 = base[-1].copy()
            vals = richardson_combine(base) if kprime > 1 else base[0]
            per_dir.append(DofVector(vals, grid, "dirichlet0"))
        gammas.append(per_dir)
        grids.append(grid)
    return NumericalCorrectorSet(gammas=gammas, grids=grids, M=M, kprime=kprime)


def reconstructed_gradient(
    mesh: CoarseMesh, corr: NumericalCorrectorSet, points: np.ndarray
) -> np.ndarray:
    """C(x) = M_i + grad gamma_i(x) on the element containing each point."""
    pts = np.atleast_2d(points)
    elems = mesh.locate(pts)
    out = np.empty_like(pts)
    for e in np.unique(elems):
        mask = elems == e
        grad = corr.M[e][None, :] + (
            corr.M[e, 0] * interpolate_gradient(corr.gammas[e][0], pts[mask])
            + corr.M[e, 1] * interpolate_gradient(corr.gammas[e][1], pts[mask])
        )
        out[mask] = grad
    return out


def fine_reference(
    field_eps: CoefficientField,
    extent,
    h_ref: float,
    f: Callable[[np.ndarray], np.ndarray],
    rel_tol: float = 1e-10,
) -> DofVector:
    """Single-scale Dirichlet solve of -div(A_eps grad u) = f on D."""
    ax, ay = extent
    grid = StructuredGrid.from_box((0.0, ax, 0.0, ay), int(round(ax / h_ref)), int(round(ay / h_ref)))
    system = assemble(grid, field_eps, 0.0, xi=None, bc="dirichlet0", source=f)
    return solve(system, rel_tol=rel_tol)


def h1_distance(u_fine: DofVector, u_coarse: P1Function) -> tuple:
    """(L2, H1-seminorm, H1) distances, quadrature on the fine grid."""
    g = u_fine.grid
    pts = g.quad_points()
    w = g.quad_weight()
    ufine_vals = _q1_values_at_quad(u_fine)
    gfine = gradient_field(u_fine)
    ucoarse_vals = u_coarse(pts)
    gcoarse = u_coarse.gradient_at(pts)
    dl2 = w * np.sum((ufine_vals - ucoarse_vals) ** 2)
    dh1s = w * np.sum((gfine - gcoarse) ** 2)
    return math.sqrt(dl2), math.sqrt(dh1s), math.sqrt(dl2 + dh1s)


def _q1_values_at_quad(u: DofVector) -> np.ndarray:
    g = u.grid
    nodal = u.nodal()
    from .grid import GAUSS_POINTS, _shape_values

    I, J = np.meshgrid(np.arange(g.nx), np.arange(g.ny), indexing="ij")
    corners = np.stack(
        [nodal[I, J].ravel(), nodal[I + 1, J].ravel(), nodal[I, J + 1].ravel(), nodal[I + 1, J + 1].ravel()],
        axis=1,
    )
    out = np.empty((g.nx * g.ny, 4))
    for gp in range(4):
        N, _ = _shape_values(*GAUSS_POINTS[gp])
        out[:, gp] = corners @ N
    return out.ravel()


@dataclass
class HMMResult:
    mesh: CoarseMesh
    tensor_map: LocalTensorMap
    u: P1Function
    params: dict


def hmm_solve(
    field: CoefficientField,
    eps: float,
    H: float,
    f: Callable[[np.ndarray], np.ndarray],
    delta: float = 1.5,
    T: Optional[float] = None,
    k: int = 1,
    h: Optional[float] = None,
    p: Optional[float] = None,
    extent=(1.0, 1.0),
    rel_tol: float = 1e-8,
) -> HMMResult:
    """Full coarse pipeline on the rectangle D with defaults per the method.

    T defaults to H/eps, h to eps/8, and the filter order to 2k - 1.
    """
    mesh = CoarseMesh.rectangle(extent[0], extent[1], H)
    T = (H / eps) if T is None else T
    h = (eps / 8.0) if h is None else h
    filt = build_filter(2 * k - 1 if p is None else p)
    field_eps = scaled_field(field, eps)
    tmap = build_tensor_map(mesh, field_eps, eps, T, k, delta, h, filt, rel_tol=rel_tol)
    u = coarse_solve(mesh, tmap, f)
    params = dict(eps=eps, H=H, T=T, k=k, delta=delta, h=h, p=filt.order)
    return HMMResult(mesh=mesh, tensor_map=tmap, u=u, params=params)
