import numpy as np
import pytest

from juliatower.errors import (ContinuationStuck, NewtonDiverged, NotPeriodic, NotRepelling,
                               ValidationError)
from juliatower.family import (Relation, cubic_pm_a_family, family_from_expression, family_path,
                               lambda_hyperbolic_check, multiplier_at, quadratic_family,
                               relation_residual, solve_critical_relation, spec_from_config)
from juliatower.poly import Polynomial


def direct_residual(f, c, n, m):
    """Independent check of f^n(c) - f^(n+m)(c) by plain iteration."""
    a = c
    for _ in range(n):
        a = f(a)
    b = a
    for _ in range(m):
        b = f(b)
    return abs(a - b)


class TestRelations:
    def test_relation_validates(self):
        with pytest.raises(ValidationError):
            Relation(0, 0, 1)
        with pytest.raises(ValidationError):
            Relation(0, 1, 0)

    def test_chebyshev(self, chebyshev):
        assert chebyshev.lam[0] == pytest.approx(-2, abs=1e-12)
        assert chebyshev.landing_points[0] == pytest.approx(2, abs=1e-12)
        assert chebyshev.multipliers[0] == pytest.approx(4, abs=1e-10)
        assert chebyshev.chi_hat == pytest.approx(4, abs=1e-10)
        assert direct_residual(chebyshev.poly, 0, 2, 1) <= 1e-12

    def test_critical_value_on_two_cycle(self):
        # f^2(c) on a repelling 2-cycle: c = i, where 0 -> i -> i - 1 -> -i -> i - 1
        spec = quadratic_family(((0, 2, 2),))
        p = solve_critical_relation(spec, [-0.2 + 1.0j])
        assert p.lam[0] == pytest.approx(1j, abs=1e-10)
        assert direct_residual(p.poly, 0, 2, 2) <= 1e-12
        assert abs(p.multipliers[0]) > 1 + 1e-6

    def test_divergence(self):
        with pytest.raises(NewtonDiverged):
            solve_critical_relation(quadratic_family(), [1e200])

    def test_non_repelling_landing(self):
        # c = 0 satisfies f^2(0) = f^3(0) with the superattracting fixed point 0
        with pytest.raises(NotRepelling):
            solve_critical_relation(quadratic_family(), [0.0])

    def test_guess_shape(self):
        with pytest.raises(ValidationError):
            solve_critical_relation(quadratic_family(), [1.0, 2.0])

    def test_cubic_closed_form(self, cubic):
        spec, p = cubic
        a = 0.6
        # f(a) = 2a^3 - 2a^3... b = 2a^3 - 2a, landing r = -2a, chi = 9a^2
        assert p.lam[1] == pytest.approx(2 * a ** 3 - 2 * a, abs=1e-12)
        assert p.landing_points[0] == pytest.approx(-2 * a, abs=1e-12)
        assert p.multipliers[0] == pytest.approx(9 * a ** 2, abs=1e-10)
        assert np.all(np.abs(relation_residual(spec, p.lam)) <= 1e-9 * p.poly.scale)


class TestMultiplier:
    def test_values(self):
        assert multiplier_at(Polynomial((-2, 0, 1)), 2, 1) == pytest.approx(4)
        assert multiplier_at(Polynomial((0, 0, 1)), 1, 1) == pytest.approx(2)
        w = np.exp(2j * np.pi / 3)
        assert multiplier_at(Polynomial((0, 0, 1)), w, 2) == pytest.approx(4)

    def test_not_periodic(self):
        with pytest.raises(NotPeriodic):
            multiplier_at(Polynomial((0, 0, 1)), 0.5, 1)


class TestHyperbolicity:
    def test_quadratic_vacuous(self, chebyshev):
        rep = lambda_hyperbolic_check(chebyshev)
        assert rep["free_critical"] == []
        assert rep["lambda_hyperbolic"]
        assert rep["przytycki_sum"] == pytest.approx(0, abs=1e-12)
        assert rep["heuristic"]

    def test_cubic_attracted(self, cubic):
        _, p = cubic
        rep = lambda_hyperbolic_check(p)
        (entry,) = rep["free_critical"]
        assert entry["status"] == "attracted"
        assert abs(complex(*entry["multiplier"])) < 1
        # the attracting fixed point of z^3 - 1.08 z - 0.768 near -0.4 (multiplier -0.6)
        assert complex(*entry["cycle_point"]) == pytest.approx(-0.4, abs=1e-9)

    def test_cubic_escaped(self):
        spec = cubic_pm_a_family()
        p = solve_critical_relation(spec, [1.5, 2 * 1.5 ** 3 - 3])
        rep = lambda_hyperbolic_check(p)
        assert rep["free_critical"][0]["status"] == "escaped"
        assert not rep["lambda_hyperbolic"]


class TestPath:
    def test_constant_path(self, cubic):
        spec, p = cubic
        path = family_path(spec, p, p.lam, 3)
        assert len(path) == 3
        for q in path:
            assert np.allclose(q.lam, p.lam, atol=1e-12)

    def test_short_segment(self, cubic):
        spec, p = cubic
        path = family_path(spec, p, [0.65, 0], 5)
        chis = [abs(q.multipliers[0]) for q in [p] + path]
        for q in path:
            assert np.all(np.abs(relation_residual(spec, q.lam)) <= 1e-9 * q.poly.scale)
            # independent re-solve reproduces the point
            again = solve_critical_relation(spec, q.lam)
            assert np.allclose(again.lam, q.lam, atol=1e-10)
        assert all(abs(b - a) / a < 0.1 for a, b in zip(chis, chis[1:]))
        assert path[-1].lam[0] == pytest.approx(0.65)

    def test_stuck_at_neutral_multiplier(self, cubic):
        # |chi| = 9 a^2 reaches 1 at a = 1/3
        spec, p = cubic
        with pytest.raises(ContinuationStuck):
            family_path(spec, p, [0.2, 0], 8)


class TestConfig:
    def test_builtin(self):
        spec = spec_from_config({"name": "cubic_pm_a"})
        assert spec.ambient_dim == 2
        assert spec.free == (0,)

    def test_unknown(self):
        with pytest.raises(ValidationError):
            spec_from_config({"name": "nope"})

    def test_expression_family(self):
        spec = family_from_expression("z**2 + c", ["c"], [(0, 2, 1)])
        p = solve_critical_relation(spec, [-1.9])
        assert p.lam[0] == pytest.approx(-2, abs=1e-10)
        same = spec_from_config({"expression": "z**2 + c", "params": ["c"], "relations": [[0, 2, 1]]})
        assert same.poly([-2]).coeffs == spec.poly([-2]).coeffs
