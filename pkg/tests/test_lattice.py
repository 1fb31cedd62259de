import math
from fractions import Fraction

import numpy as np
import pytest

from exhom.averaging import build_filter
from exhom.lattice import (
    PUBLISHED_CELL_VALUE,
    LatticeField,
    default_pattern,
    exact_cell_hom,
    exact_cell_hom_rational,
    lattice_corrector,
    lattice_energy_identity,
    lattice_hom,
    weave_pattern,
)


def test_default_pattern_is_binary_and_periodic():
    f = default_pattern()
    assert set(np.unique(f.h)) == {1.0, 100.0}
    assert set(np.unique(f.v)) == {1.0, 100.0}
    # periodic indexing wraps mod 4
    assert f.a_h(5, -3) == f.a_h(1, 1)


def test_default_pattern_exact_cell_value():
    A = exact_cell_hom_rational(default_pattern())
    assert A[0][0] == Fraction(10601, 404)
    assert A[1][1] == Fraction(10601, 404)
    assert A[0][1] == 0 and A[1][0] == 0
    Af = exact_cell_hom(default_pattern())
    assert Af[0, 0] == pytest.approx(PUBLISHED_CELL_VALUE, abs=1e-10)


def test_default_pattern_rotation_invariance():
    # v is the quarter-turn image of h: v[p, q] = h[q, (-p) % 4]
    f = default_pattern()
    for p in range(4):
        for q in range(4):
            assert f.v[p, q] == f.h[q, (-p) % 4]


def test_weave_pattern_closed_form():
    A = exact_cell_hom_rational(weave_pattern())
    assert A[0][0] == Fraction(10601, 404)
    # wire profile mean: (1 + 100 + 2 * 200/101) / 4
    assert Fraction(1 + 100, 4) + Fraction(200, 101) / 2 == Fraction(10601, 404)
    # correctors vanish identically for uniform wires
    c = lattice_corrector(weave_pattern(), R=24, T=4.0, k=1)
    assert np.abs(c.nodal).max() == 0.0


def test_uniform_network_trivial():
    ones = LatticeField(h=np.full((4, 4), 7.0), v=np.full((4, 4), 7.0))
    c = lattice_corrector(ones, R=24, T=2.0, k=1)
    assert np.abs(c.nodal).max() == 0.0
    A = lattice_hom(ones, R=40, T=4.0, k=1, L=40 / 6, filt=build_filter("inf"))
    assert np.allclose(A, 7.0 * np.eye(2), atol=1e-12)


def test_energy_identity():
    f = default_pattern()
    c = lattice_corrector(f, R=40, T=4.0, k=1, xi=(1.0, 0.0))
    assert np.abs(c.nodal).max() > 0.1  # nontrivial corrector
    assert lattice_energy_identity(f, c) <= 1e-10


def test_extrapolated_k2_is_nodewise_combination():
    f = default_pattern()
    c1 = lattice_corrector(f, R=32, T=2.0, k=1)
    c2 = lattice_corrector(f, R=32, T=4.0, k=1)
    ce = lattice_corrector(f, R=32, T=2.0, k=2)
    assert np.allclose(ce.nodal, 2.0 * c2.nodal - c1.nodal, atol=1e-10)


def test_isotropy_of_filtered_tensor():
    f = default_pattern()
    A = lattice_hom(f, R=80, T=2.0, k=1, L=20 / 3, filt=build_filter("inf"))
    assert abs(A[0, 1]) <= 1e-8 * abs(A[0, 0])
    assert abs(A[1, 0]) <= 1e-8 * abs(A[0, 0])
    assert abs(A[0, 0] - A[1, 1]) <= 1e-8 * abs(A[0, 0])


def test_naive_corrector_max_principle_bound():
    f = default_pattern()
    R = 40
    c = lattice_corrector(f, R=R, T=math.inf, k=1, xi=(1.0, 0.0))
    beta, alpha = 100.0, 1.0
    assert np.abs(c.nodal).max() <= 4 * R * beta / alpha


def test_window_validation():
    f = default_pattern()
    with pytest.raises(ValueError, match="exceeds"):
        lattice_hom(f, R=24, T=2.0, k=1, L=13.0, filt=build_filter("inf"))


def test_T_inf_rejects_k2():
    with pytest.raises(ValueError):
        lattice_corrector(default_pattern(), R=24, T=math.inf, k=2)


def test_pattern_file_roundtrip(tmp_path):
    f = default_pattern()
    path = tmp_path / "pattern.txt"
    lines = ["# horizontal edges"]
    lines += [" ".join(str(int(x)) for x in row) for row in f.h]
    lines += ["# vertical edges"]
    lines += [" ".join(str(int(x)) for x in row) for row in f.v]
    path.write_text("\n".join(lines))
    g = LatticeField.from_file(path)
    assert np.array_equal(g.h, f.h)
    assert np.array_equal(g.v, f.v)


def test_pattern_file_validation(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text(" ".join(["2"] * 32))
    with pytest.raises(ValueError, match="1 and 100"):
        LatticeField.from_file(path)
    path.write_text(" ".join(["1"] * 31))
    with pytest.raises(ValueError, match="expected 32"):
        LatticeField.from_file(path)


def test_published_value_decomposition():
    # 26.240099009901... = (1 + 100 + 2 * harmonic_mean(1, 100)) / 4
    hm = 2 * 1 * 100 / (1 + 100)
    assert (1 + 100 + 2 * hm) / 4 == pytest.approx(PUBLISHED_CELL_VALUE, abs=1e-12)
