"""Regularized correctors on boxes, Richardson extrapolation in T, and checks.

The box corrector phi_{T,R} solves, in H^1_0(Q_R),

    T^{-1} phi - div(A (xi + grad phi)) = 0,

and the extrapolated families are built by the dyadic induction

    phi_{T,1} = phi_T,    phi_{T,k+1} = (2^k phi_{2T,k} - phi_{T,k}) / (2^k - 1),

which cancels successive powers of T^{-1} in the systematic error.  Dual
correctors use the pointwise transpose field.  Two independent consistency
checks are provided: the discrete operator identity satisfied by the
extrapolated iterates, and the scalar resolvent identity for the rational
functions generated by the same induction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import mpmath
import numpy as np

from .coeffs import CoefficientField
from .grid import (
    DofVector,
    StructuredGrid,
    assemble,
    gradient_field,
    interpolate_gradient,
    mass_matrix,
    solve,
)

__all__ = [
    "CorrectorSolution",
    "solve_regularized",
    "corrector_ladder",
    "extrapolate",
    "richardson_combine",
    "richardson_weights",
    "residual_identity_check",
    "psi_value",
    "psi_identity_check",
    "corrector_error",
]


@dataclass
class CorrectorSolution:
    grid: StructuredGrid
    u: DofVector
    T: float  # math.inf encodes the unregularized problem
    k: int
    xi: np.ndarray
    dual: bool = False
    bc: str = "dirichlet0"

    def __post_init__(self):
        if math.isinf(self.T) and self.k != 1:
            raise ValueError("T = inf admits no extrapolation (k must be 1)")

    def gradient_at(self, points: np.ndarray) -> np.ndarray:
        return interpolate_gradient(self.u, points)

    def gradient_at_quad(self) -> np.ndarray:
        return gradient_field(self.u)


def solve_regularized(
    grid: StructuredGrid,
    field: CoefficientField,
    T: float,
    xi,
    dual: bool = False,
    rel_tol: float = 1e-10,
    x0: Optional[np.ndarray] = None,
) -> CorrectorSolution:
    """Solve the zero-order-regularized corrector problem on the grid's box.

    T = inf gives the naive (unregularized) Dirichlet approximation.  Dual
    solves use the transpose field.
    """
    xi = np.asarray(xi, dtype=float)
    eff = field.transpose() if dual else field
    inv_T = 0.0 if math.isinf(T) else 1.0 / T
    system = assemble(grid, eff, inv_T, xi=xi, bc="dirichlet0")
    u = solve(system, rel_tol=rel_tol, x0=x0)
    return CorrectorSolution(grid=grid, u=u, T=T, k=1, xi=xi, dual=dual)


def corrector_ladder(
    grid: StructuredGrid,
    field: CoefficientField,
    T: float,
    kmax: int,
    xi,
    dual: bool = False,
    rel_tol: float = 1e-10,
) -> list[CorrectorSolution]:
    """Base solves at T, 2T, ..., 2^{kmax-1} T (warm-started up the ladder)."""
    out = []
    x0 = None
    for j in range(kmax):
        sol = solve_regularized(grid, field, T * 2.0**j, xi, dual=dual, rel_tol=rel_tol, x0=x0)
        out.append(sol)
        x0 = sol.u.values.copy()
    return out


def richardson_weights(k: int):
    """Coefficients of phi_{T,k} on the base solves (phi_T, ..., phi_{2^{k-1}T}).

    Computed exactly with fractions by running the defining induction; the
    weights of each level sum to one.
    """
    from fractions import Fraction

    # table[j] = weights of phi_{2^j T, level} as the induction advances
    table = [[Fraction(1) if i == j else Fraction(0) for i in range(k)] for j in range(k)]
    for level in range(1, k):
        c = Fraction(2**level)
        new = []
        for j in range(k - level):
            new.append([(c * a - b) / (c - 1) for a, b in zip(table[j + 1], table[j])])
        table = new
    return table[0]


def richardson_combine(vectors: Sequence[np.ndarray], k: Optional[int] = None) -> np.ndarray:
    """Combine base solutions at T, 2T, ..., 2^{k-1}T into the level-k iterate."""
    k = len(vectors) if k is None else k
    if len(vectors) != k:
        raise ValueError("need exactly k base vectors")
    level = [np.asarray(v, dtype=float) for v in vectors]
    for lev in range(1, k):
        c = 2.0**lev
        level = [(c * level[j + 1] - level[j]) / (c - 1.0) for j in range(len(level) - 1)]
    return level[0]


def extrapolate(solutions: Sequence[CorrectorSolution]) -> CorrectorSolution:
    """Richardson-extrapolate a dyadic ladder of base corrector solves.

    `solutions` holds k base (level-1) solves at T, 2T, ..., 2^{k-1}T on the
    same grid, direction, and duality; the result is phi_{T,k}.  k = 1
    returns the input unchanged.
    """
    if len(solutions) == 0:
        raise ValueError("empty ladder")
    k = len(solutions)
    first = solutions[0]
    if k == 1:
        return first
    T = first.T
    if math.isinf(T):
        raise ValueError("cannot extrapolate the unregularized problem")
    for j, s in enumerate(solutions):
        if s.grid is not first.grid and (
            s.grid.nx != first.grid.nx
            or s.grid.ny != first.grid.ny
            or abs(s.grid.x0 - first.grid.x0) > 1e-14
            or abs(s.grid.hx - first.grid.hx) > 1e-14
        ):
            raise ValueError("ladder solutions live on different grids")
        if not np.allclose(s.xi, first.xi) or s.dual != first.dual:
            raise ValueError("ladder solutions mix directions or duality")
        if s.k != 1:
            raise ValueError("ladder entries must be base (k = 1) solves")
        if not math.isclose(s.T, T * 2.0**j, rel_tol=1e-12):
            raise ValueError("T values must form the dyadic ladder T, 2T, 4T, ...")
    combined = richardson_combine([s.u.values for s in solutions])
    u = DofVector(combined, first.grid, first.u.bc, first.u.pinned)
    return CorrectorSolution(grid=first.grid, u=u, T=T, k=k, xi=first.xi, dual=first.dual)


def extrapolate_prefix(solutions: Sequence[CorrectorSolution], k: int) -> CorrectorSolution:
    """Level-k extrapolation from the first k rungs of a longer ladder."""
    return extrapolate(list(solutions[:k]))


def residual_identity_check(
    phi_Tk1: CorrectorSolution,
    phi_2Tk: CorrectorSolution,
    field: CoefficientField,
) -> float:
    """Discrete residual of T^{-1} phi_{T,k+1} - div A(xi + grad phi_{T,k+1}) = T^{-1} phi_{2T,k}.

    Both arguments must come from the same extrapolation ladder: the first at
    level k+1 and base parameter T, the second at level k and base 2T.
    Returns ||(T^{-1} M + K) u1 - b - T^{-1} M u2|| / ||b||; a vanishing
    right-hand side (constant fields) returns 0 by convention.
    """
    T = phi_Tk1.T
    if math.isinf(T):
        raise ValueError("identity requires finite T")
    if phi_Tk1.k != phi_2Tk.k + 1 or not math.isclose(phi_2Tk.T, 2.0 * T, rel_tol=1e-12):
        raise ValueError("arguments are not consecutive ladder iterates")
    if phi_Tk1.grid is not phi_2Tk.grid and phi_Tk1.grid != phi_2Tk.grid:
        raise ValueError("arguments live on different grids")
    if not np.allclose(phi_Tk1.xi, phi_2Tk.xi) or phi_Tk1.dual != phi_2Tk.dual:
        raise ValueError("arguments mix directions or duality")
    eff = field.transpose() if phi_Tk1.dual else field
    system = assemble(phi_Tk1.grid, eff, 1.0 / T, xi=phi_Tk1.xi, bc="dirichlet0")
    bnorm = float(np.linalg.norm(system.rhs))
    # homogeneous right-hand sides (constant fields) assemble to pure
    # roundoff; treat them as zero so the 0/0 case returns 0 by convention
    bfloor = 1e-12 * field.beta_hint * phi_Tk1.grid.hx * math.sqrt(system.rhs.size)
    if bnorm <= bfloor:
        return 0.0
    M = mass_matrix(phi_Tk1.grid, bc="dirichlet0")
    res = system.matrix @ phi_Tk1.u.values - system.rhs - (M @ phi_2Tk.u.values) / T
    return float(np.linalg.norm(res)) / bnorm


def psi_value(T, k: int, lam, dps: int = 60):
    """psi_{T,k}(lambda) by the defining induction, in mpmath arithmetic."""
    with mpmath.workdps(dps):
        T = mpmath.mpf(T)
        lam = mpmath.mpf(lam)
        vals = [1 / (1 / (T * 2**j) + lam) for j in range(k)]
        for level in range(1, k):
            c = mpmath.mpf(2) ** level
            vals = [(c * vals[j + 1] - vals[j]) / (c - 1) for j in range(len(vals) - 1)]
        return vals[0]


def psi_identity_check(T: float, k: int, lambdas, dps: int = 60) -> float:
    """Max relative deviation between 1/lam - psi_{T,k}(lam) and its closed form.

    The closed form is 2^{-k(k-1)/2} T^{-k} / (lam prod_{i<k} ((2^i T)^{-1} + lam)).
    The recursion loses ~(lam T)^k digits to cancellation, so both sides are
    evaluated in mpmath working precision (`dps` digits); the returned
    deviation is exact-rational-identity small whenever the induction is
    implemented correctly.
    """
    worst = 0.0
    with mpmath.workdps(dps):
        Tm = mpmath.mpf(T)
        for lam in np.atleast_1d(lambdas):
            lamm = mpmath.mpf(float(lam))
            lhs = 1 / lamm - psi_value(Tm, k, lamm, dps=dps)
            prod = mpmath.mpf(1)
            for i in range(k):
                prod *= 1 / (Tm * 2**i) + lamm
            rhs = mpmath.mpf(2) ** mpmath.mpf(-0.5 * k * (k - 1)) * Tm ** (-k) / (lamm * prod)
            dev = abs(lhs - rhs) / abs(rhs)
            worst = max(worst, float(dev))
    return worst


def _window_mask(grid: StructuredGrid, points: np.ndarray, window) -> np.ndarray:
    if window == "full":
        return np.ones(points.shape[0], dtype=bool)
    f = float(window)
    if not (0.0 < f <= 1.0):
        raise ValueError("window fraction must lie in (0, 1]")
    cx, cy = grid.center
    half = f * grid.R
    return (np.abs(points[:, 0] - cx) <= half) & (np.abs(points[:, 1] - cy) <= half)


def _check_compatible(approx: CorrectorSolution, reference) -> None:
    if not isinstance(reference, CorrectorSolution):
        return  # periodic references interpolate anywhere
    ga, gr = approx.grid, reference.grid
    ratio = ga.hx / gr.hx
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError("reference grid must be an integer refinement of the approx grid")
    off = (ga.x0 - gr.x0) / gr.hx
    if abs(off - round(off)) > 1e-9:
        raise ValueError("grids are not aligned")
    if (
        ga.x0 < gr.x0 - 1e-12
        or ga.y0 < gr.y0 - 1e-12
        or ga.x0 + ga.nx * ga.hx > gr.x0 + gr.nx * gr.hx + 1e-12
        or ga.y0 + ga.ny * ga.hy > gr.y0 + gr.ny * gr.hy + 1e-12
    ):
        raise ValueError("approx domain is not contained in the reference domain")


def corrector_error(approx: CorrectorSolution, reference, window="full") -> float:
    """Mean-square gradient error over a centered window.

    Computes fint_W |grad approx - grad ref|^2 where W is the full box
    (window='full') or the centered sub-box of half-width f*R (window=f).
    The comparison collocates at the approx grid's Gauss points; the
    reference contributes the gradient of its own interpolant there
    (CorrectorSolution on a same-or-finer aligned grid, or any object with a
    `gradient_at(points)` method, e.g. a periodic cell corrector).
    """
    _check_compatible(approx, reference)
    pts = approx.grid.quad_points()
    mask = _window_mask(approx.grid, pts, window)
    if not np.any(mask):
        raise ValueError("window contains no quadrature points")
    ga = approx.gradient_at_quad()[mask]
    gr = reference.gradient_at(pts[mask])
    diff = ga - gr
    # uniform weights: the mean over the window needs no quadrature factors
    return float(np.mean(np.sum(diff * diff, axis=1)))
