import cmath
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from juliatower.errors import BudgetExceeded, ValidationError
from juliatower.poly import (Polynomial, aberth_roots, evaluate_orbit, green_function,
                             lyapunov_exponent, periodic_points, preimages, solve_preimages)

Z2 = Polynomial((0, 0, 1))
CHEB = Polynomial((-2, 0, 1))

small_c = st.complex_numbers(max_magnitude=0.5, allow_nan=False, allow_infinity=False)
points = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def green_oracle(c, z, n=40):
    """High-precision escape rate 2^-n log|f^n(z)| for z^2 + c."""
    mpmath.mp.dps = 60
    w = mpmath.mpc(z)
    for _ in range(n):
        w = w * w + c
    return float(mpmath.log(abs(w)) / mpmath.mpf(2) ** n)


class TestPolynomial:
    def test_degree_and_critical_points(self):
        f = Polynomial((1, -3, 0, 1))
        assert f.degree == 3
        assert sorted(c.real for c in f.critical_points) == pytest.approx([-1, 1])
        for c in f.critical_points:
            assert abs(f.deriv(c)) < 1e-10 * f.scale

    def test_rejects_bad_coefficients(self):
        with pytest.raises(ValidationError):
            Polynomial((1, 2, 0))
        with pytest.raises(ValidationError):
            Polynomial((1, 2))

    def test_json_round_trip(self):
        f = Polynomial((1 + 2j, 0, -0.5, 1))
        g = Polynomial.from_json(f.to_json())
        assert g.coeffs == f.coeffs


class TestOrbit:
    def test_unit_orbit(self):
        rec = evaluate_orbit(Z2, 1, 3)
        assert rec.points == (1, 1, 1, 1)
        assert rec.derivative_product == 8
        assert not rec.escaped

    def test_chebyshev_orbit(self):
        assert evaluate_orbit(CHEB, 0, 3).points == (0, -2, 2, 2)

    def test_escape(self):
        # 3 -> 9 -> 81 stays inside radius 100; 6561 is the first point outside
        rec = evaluate_orbit(Z2, 3, 10, escape_radius=100)
        assert rec.escaped
        assert rec.points == (3, 9, 81, 6561)

    @given(z=points, c=small_c, n=st.integers(0, 8))
    @settings(max_examples=60, deadline=None)
    def test_chain_rule(self, z, c, n):
        f = Polynomial.quadratic(c)
        rec = evaluate_orbit(f, z, n)
        prod = 1.0 + 0j
        for p in rec.points[:-1]:
            prod *= f.deriv(p)
        assert abs(rec.derivative_product - prod) <= 1e-12 * max(1.0, abs(prod))


class TestPreimages:
    def test_chebyshev_preimages(self):
        assert preimages(CHEB, 2) == pytest.approx([-2, 2])

    def test_double_roots(self):
        assert np.allclose(preimages(Z2, 0), [0, 0])
        assert np.allclose(preimages(CHEB, -2), [0, 0], atol=1e-7)

    @given(w=points, c=small_c)
    @settings(max_examples=60, deadline=None)
    def test_residual_and_order(self, w, c):
        f = Polynomial.quadratic(c)
        z = preimages(f, w)
        assert len(z) == 2
        for r in z:
            assert abs(f(r) - w) <= 1e-10 * max(f.scale, 1.0) * max(1.0, abs(w))
        assert (z[0].real, z[0].imag) <= (z[1].real, z[1].imag) or abs(z[0].real - z[1].real) < 1e-12

    def test_cubic_batch(self):
        f = Polynomial((0.3, -1.2, 0.1, 1))
        w = np.array([0.5, -1 + 1j, 2j])
        roots = solve_preimages(f, w)
        assert roots.shape == (3, 3)
        assert np.max(np.abs(f(roots) - w[:, None])) < 1e-10

    def test_aberth_known_roots(self):
        # (z - 1)(z - 2)(z + 3) = z^3 - 7z + 6
        roots, ok = aberth_roots(np.array([[6, -7, 0, 1]]))
        assert ok.all()
        assert sorted(roots[0].real) == pytest.approx([-3, 1, 2])


class TestPeriodicPoints:
    def test_fixed_points_of_square(self):
        pts = periodic_points(Z2, 1)
        assert [p.z for p in pts] == pytest.approx([0, 1])
        assert [p.multiplier for p in pts] == pytest.approx([0, 2])

    def test_fixed_points_of_chebyshev(self):
        pts = periodic_points(CHEB, 1)
        assert [p.z for p in pts] == pytest.approx([-1, 2])
        assert [p.multiplier for p in pts] == pytest.approx([-2, 4])

    def test_period_two_of_square(self):
        pts = periodic_points(Z2, 2)
        z = np.array([p.z for p in pts])
        assert len(z) == 4
        cyc = [p for p in pts if abs(p.z ** 2 + p.z + 1) < 1e-10]
        assert len(cyc) == 2
        for p in cyc:
            assert p.multiplier == pytest.approx(4)

    @pytest.mark.parametrize("n", [6, 8, 10])
    def test_count_and_residual(self, n):
        f = Polynomial.quadratic(0.1 + 0.1j)
        pts = periodic_points(f, n)
        assert len(pts) == 2 ** n
        z = np.array([p.z for p in pts])
        w, _ = f.iterate(z, n)
        assert np.max(np.abs(w - z)) <= 1e-8 * f.scale * max(1.0, np.max(np.abs(z)))
        # all distinct for a map without multiple periodic points
        d = np.abs(z[:, None] - z[None, :]) + np.eye(z.size)
        assert d.min() > 1e-8

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            periodic_points(Z2, 17)


class TestGreen:
    def test_bounded_orbit(self):
        assert green_function(Z2, 0.5) == 0.0
        assert green_function(Z2, 1j) == 0.0

    def test_outside_disk(self):
        assert green_function(Z2, 2) == pytest.approx(math.log(2), abs=1e-12)

    def test_chebyshev_value(self):
        assert green_function(CHEB, 3) == pytest.approx(math.log((3 + math.sqrt(5)) / 2), abs=1e-10)

    def test_large_c_against_high_precision(self):
        f = Polynomial((5, 0, 1))
        assert green_function(f, 0) == pytest.approx(green_oracle(5, 0), abs=1e-10)
        assert green_function(f, 0) == pytest.approx(0.8509922495, abs=1e-9)

    @given(z=st.complex_numbers(min_magnitude=2.5, max_magnitude=50, allow_nan=False,
                                allow_infinity=False), c=small_c)
    @settings(max_examples=50, deadline=None)
    def test_functional_equation(self, z, c):
        f = Polynomial.quadratic(c)
        assert green_function(f, f(z)) == pytest.approx(2 * green_function(f, z), abs=1e-8)


class TestLyapunov:
    def test_square_both_methods(self):
        assert lyapunov_exponent(Z2, "periodic", 6) == pytest.approx(math.log(2), abs=1e-12)
        assert lyapunov_exponent(Z2, "przytycki") == pytest.approx(math.log(2), abs=1e-12)

    def test_chebyshev_przytycki(self):
        assert lyapunov_exponent(CHEB, "przytycki") == pytest.approx(math.log(2), abs=1e-12)

    def test_escaping_critical_point(self):
        f = Polynomial((5, 0, 1))
        expect = math.log(2) + green_oracle(5, 0)
        assert lyapunov_exponent(f, "przytycki") == pytest.approx(expect, abs=1e-9)

    @pytest.mark.parametrize("c", [0.0, 0.1, 0.2j, -0.15 + 0.1j])
    def test_methods_agree(self, c):
        f = Polynomial.quadratic(c)
        diff = lyapunov_exponent(f, "periodic", 10) - lyapunov_exponent(f, "przytycki", 60)
        assert abs(diff) <= 1e-3

    def test_unknown_method(self):
        with pytest.raises(ValidationError):
            lyapunov_exponent(Z2, "bogus")
