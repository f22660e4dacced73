import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from juliatower.errors import (DegenerateFiber, ItineraryMismatch, NoBracket, ParamOutOfRange,
                               ValidationError)
from juliatower.family import cubic_pm_a_family, quadratic_family, solve_critical_relation
from juliatower.motion import MatchedTree, build_preimage_tree, transport_tree
from juliatower.poly import Polynomial
from juliatower.pressure import (aitken, base_independence, bowen_dimension, default_base,
                                 joint_pressure, pressure_estimate, smoothness_probe)

LOG2 = np.log(2)
SQUARE = Polynomial((0, 0, 1))


@pytest.fixture(scope="module")
def near_zero():
    """Base tree at c = 0 and its motions to a 3x3 set of nearby parameters."""
    spec = quadratic_family()
    tree = build_preimage_tree(SQUARE, default_base(SQUARE), 10)
    lams = [0.0, 0.05, 0.03j]
    motions = {c: transport_tree(spec, tree, [0], [c]) for c in lams}
    return spec, tree, motions


class TestPressure:
    @pytest.mark.parametrize("t", [0.0, 0.5, 1.0, 1.5, 2.0])
    def test_square_closed_form(self, t):
        est = pressure_estimate(SQUARE, t, depth=12)
        assert est.value == pytest.approx((1 - t) * LOG2, abs=1e-6)

    def test_chebyshev_dimension_one(self):
        est = pressure_estimate(Polynomial((-2, 0, 1)), 1.0, depth=16)
        assert abs(est.value) <= 2e-2

    def test_fields(self):
        est = pressure_estimate(Polynomial((0.1, 0, 1)), 0.7, depth=10)
        assert est.value == est.extrapolated
        assert est.uncertainty >= 0
        assert [n for n, _ in est.depth_sequence] == list(range(1, 11))
        assert est.to_dict()["depth_sequence"][0][0] == 1

    def test_range(self):
        with pytest.raises(ValidationError):
            pressure_estimate(SQUARE, 2.5)

    def test_degenerate_fiber(self):
        t = build_preimage_tree(SQUARE, 1.0, 3)
        t.derivs = [np.zeros_like(d) for d in t.derivs]
        with pytest.raises(DegenerateFiber):
            pressure_estimate(SQUARE, 1.0, tree=t)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-0.6, 0.2), st.floats(-0.3, 0.3), st.floats(0.0, 1.9), st.floats(0.05, 0.1))
    def test_strictly_decreasing(self, a, b, t, dt):
        f = Polynomial((complex(a, b), 0, 1))
        tree = build_preimage_tree(f, default_base(f), 8)
        p1 = pressure_estimate(f, t, tree=tree).value
        p2 = pressure_estimate(f, t + dt, tree=tree).value
        assert p2 < p1 - 1e-12

    def test_base_independence(self):
        rep = base_independence(Polynomial((0.1, 0, 1)), 0.7, depth=12)
        assert not rep["flag"]
        assert rep["difference"] <= 1e-6


class TestJoint:
    T = [0.3, 0.8, 1.4]

    def test_t2_zero_bitwise(self, near_zero):
        _, _, m = near_zero
        for t1 in self.T:
            j = joint_pressure(m[0.05], m[0.03j], t1, 0.0)
            p = pressure_estimate(m[0.05].tree1.poly, t1, tree=m[0.05].tree1)
            assert j.value == p.value
            assert j.increments == p.increments

    def test_diagonal_additivity(self, near_zero):
        _, _, m = near_zero
        for t1 in self.T:
            for t2 in self.T:
                j = joint_pressure(m[0.05], m[0.05], t1, t2)
                p = pressure_estimate(m[0.05].tree1.poly, min(t1 + t2, 2.0), tree=m[0.05].tree1)
                if t1 + t2 <= 2:
                    assert abs(j.value - p.value) <= 1e-12

    def test_swap_symmetry(self, near_zero):
        _, _, m = near_zero
        for t1 in self.T:
            for t2 in self.T:
                a = joint_pressure(m[0.05], m[0.03j], t1, t2)
                b = joint_pressure(m[0.03j], m[0.05], t2, t1)
                assert abs(a.value - b.value) <= 1e-12

    def test_interpolates(self, near_zero):
        # Hoelder in the weights: the joint value lies between the two pure values
        _, _, m = near_zero
        j = joint_pressure(m[0.05], m[0.03j], 0.5, 0.5).value
        p1 = pressure_estimate(m[0.05].tree1.poly, 1.0, tree=m[0.05].tree1).value
        p2 = pressure_estimate(m[0.03j].tree1.poly, 1.0, tree=m[0.03j].tree1).value
        assert j <= 0.5 * (p1 + p2) + 1e-12

    def test_errors(self, near_zero):
        _, tree, m = near_zero
        with pytest.raises(ParamOutOfRange):
            joint_pressure(m[0.05], m[0.05], 0.0, 0.0)
        other = MatchedTree.identity(build_preimage_tree(SQUARE, -1.0, 10))
        with pytest.raises(ItineraryMismatch):
            joint_pressure(m[0.05], other, 1.0, 0.5)


class TestDimension:
    def test_circle(self):
        assert bowen_dimension(SQUARE, depth=16).delta == pytest.approx(1, abs=1e-4)

    def test_interval(self):
        r = bowen_dimension(Polynomial((-2, 0, 1)), depth=16)
        assert r.delta == pytest.approx(1, abs=2e-2)
        assert r.residual <= 1e-8
        assert r.bracket == (0.0, 2.0)

    def test_small_c_asymptotic(self):
        c = 0.05
        r = bowen_dimension(Polynomial((c, 0, 1)), depth=16)
        assert r.delta == pytest.approx(1 + c ** 2 / (4 * LOG2), abs=5e-4)

    def test_cantor_set_below_one(self):
        assert 0 < bowen_dimension(Polynomial((5, 0, 1)), depth=14).delta < 1

    def test_no_bracket(self):
        t = build_preimage_tree(SQUARE, 1.0, 6)
        t.derivs = [np.full_like(d, 0.5) for d in t.derivs]
        with pytest.raises(NoBracket):
            bowen_dimension(SQUARE, tree=t)

    def test_tol(self):
        with pytest.raises(ValidationError):
            bowen_dimension(SQUARE, tol=1e-9)


class TestSmoothness:
    def test_constant(self):
        assert smoothness_probe(np.arange(7) * 0.1, np.ones(7))["indicator"] == 0

    def test_cubic_identity(self):
        h = 0.1
        x = np.arange(9) * h
        r = smoothness_probe(x, 2.5 * x ** 3 - x + 4)
        assert np.allclose(r["third_differences"], 6 * 2.5 * h ** 3, atol=1e-12)

    def test_cubic_family_path(self):
        spec = cubic_pm_a_family()

        def deltas(n):
            a = np.linspace(0.55, 0.65, n)
            out = []
            for x in a:
                p = solve_critical_relation(spec, [x, 2 * x ** 3 - 2 * x])
                out.append(bowen_dimension(p.poly, depth=8).delta)
            return a, out

        coarse = smoothness_probe(*deltas(7))["indicator"]
        fine = smoothness_probe(*deltas(13))["indicator"]
        assert np.isfinite(coarse) and np.isfinite(fine)
        assert fine / coarse == pytest.approx(1, abs=0.5)

    def test_validation(self):
        with pytest.raises(ValidationError):
            smoothness_probe(np.arange(6), np.ones(6))
        with pytest.raises(ValidationError):
            smoothness_probe([0, 1, 2, 4, 5, 6, 7], np.ones(7))


def test_aitken_geometric():
    x = [1 + 0.5 ** k for k in range(1, 6)]
    assert aitken(x) == pytest.approx(1, abs=1e-14)
    assert aitken([3.0]) == 3.0
