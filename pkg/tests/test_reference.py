import numpy as np
import pytest

from exhom.coeffs import catalog, constant, laminate
from exhom.reference import laminate_oracle, periodic_cell

SQRT3 = np.sqrt(3.0)


def test_constant_cell_problem():
    res = periodic_cell(constant(2.5), 16)
    assert np.allclose(res.A_hom, 2.5 * np.eye(2), atol=1e-10)
    for c in res.correctors:
        assert np.abs(c.u.values).max() < 1e-10


def test_zero_mean_and_symmetry():
    res = periodic_cell(catalog("mat2"), 64)
    for c in res.correctors:
        assert abs(c.u.values.mean()) < 1e-10
    assert np.allclose(res.A_hom, res.A_hom.T, atol=1e-8)


def test_mat2_cell_convergence_is_second_order():
    vals = {n: periodic_cell(catalog("mat2"), n).A_hom[0, 0] for n in (64, 128, 256)}
    d1 = abs(vals[64] - vals[128])
    d2 = abs(vals[128] - vals[256])
    assert d1 / d2 == pytest.approx(4.0, rel=0.3)


def test_laminate_cell_matches_closed_form():
    field = catalog("laminate")
    res = periodic_cell(field, 128)
    # diag(1/<1/a>, <a>) = diag(sqrt(3), 2) for a = 2 + sin(2 pi x)
    assert res.A_hom[0, 0] == pytest.approx(SQRT3, abs=2e-4)
    assert res.A_hom[1, 1] == pytest.approx(2.0, abs=1e-10)
    assert abs(res.A_hom[0, 1]) < 1e-10


def test_laminate_oracle_values():
    assert np.allclose(laminate_oracle(lambda t: np.full_like(np.asarray(t, dtype=float), 3.0)),
                       np.diag([3.0, 3.0]), atol=1e-12)
    oracle = laminate_oracle(lambda t: 2.0 + np.sin(2 * np.pi * np.asarray(t)))
    assert oracle[0, 0] == pytest.approx(SQRT3, abs=1e-10)
    assert oracle[1, 1] == pytest.approx(2.0, abs=1e-12)


def test_two_phase_laminate_oracle():
    # a = 1 on [0, 1/2), 4 on [1/2, 1): harmonic mean 1.6, arithmetic 2.5
    prof = lambda t: np.where(np.asarray(t) % 1.0 < 0.5, 1.0, 4.0)
    oracle = laminate_oracle(prof)
    assert oracle[0, 0] == pytest.approx(1.6, abs=1e-6)
    assert oracle[1, 1] == pytest.approx(2.5, abs=1e-6)


def test_oracle_rejects_nonpositive_profile():
    with pytest.raises(ValueError, match="positive"):
        laminate_oracle(lambda t: np.cos(2 * np.pi * np.asarray(t)))


def test_missing_period_raises():
    with pytest.raises(ValueError, match="period"):
        periodic_cell(catalog("mat3"), 32)


def test_voigt_reuss_bounds():
    field = catalog("mat2")
    res = periodic_cell(field, 96)
    g = res.grid
    pts = g.quad_points()
    A_q = field(pts)
    arith = A_q.mean(axis=0)
    harm = np.linalg.inv(np.linalg.inv(A_q).mean(axis=0))
    rng = np.random.default_rng(1)
    for _ in range(10):
        xi = rng.standard_normal(2)
        xi /= np.linalg.norm(xi)
        lower = xi @ harm @ xi
        upper = xi @ arith @ xi
        val = xi @ res.A_hom @ xi
        assert lower - 1e-8 <= val <= upper + 1e-8


def test_nonsymmetric_cell_problem_runs_dual():
    res = periodic_cell(catalog("mat4"), 48)
    assert res.dual_correctors is not res.correctors
    # antisymmetric part of the coefficient survives homogenization here
    assert abs(res.A_hom[0, 1] - res.A_hom[1, 0]) > 1.0


def test_periodic_corrector_gradient_wraps():
    res = periodic_cell(catalog("mat2"), 64)
    c = res.correctors[0]
    pts = np.array([[0.25, 0.5], [1.25, 0.5], [-0.75, 3.5]])
    g = c.gradient_at(pts)
    assert np.allclose(g[0], g[1], atol=1e-12)
    assert np.allclose(g[0], g[2], atol=1e-12)
