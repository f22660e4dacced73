import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from juliatower.errors import BranchCollision, BudgetExceeded, ItineraryMismatch, ValidationError
from juliatower.family import quadratic_family
from juliatower.motion import (MatchedTree, build_preimage_tree, check_matched, holder_estimate,
                               orbit_motion, transport_tree)
from juliatower.poly import Polynomial

SQUARE = Polynomial((0, 0, 1))
CHEB = Polynomial((-2, 0, 1))


@pytest.fixture(scope="module")
def spec():
    return quadratic_family()


@pytest.fixture(scope="module")
def circle_tree():
    return build_preimage_tree(SQUARE, 1.0, 8)


def conjugacy_defect(m: MatchedTree) -> float:
    """max |f1(h(z)) - h(f0(z))| recomputed from scratch, node by node."""
    t1 = m.tree1
    worst = 0.0
    for l in range(1, t1.depth + 1):
        parents = np.repeat(t1.points[l - 1], t1.degree)
        worst = max(worst, float(np.max(np.abs(t1.poly(t1.points[l]) - parents))))
    return worst


class TestTree:
    def test_fourth_roots(self):
        t = build_preimage_tree(SQUARE, 1.0, 2)
        z = t.level(2)
        assert z.size == 4
        assert np.allclose(np.sort_complex(np.round(z, 12)), np.sort_complex(np.array([1, 1j, -1, -1j])))
        assert np.allclose(np.abs(t.derivs[2]), 4)

    def test_chebyshev_level_one(self):
        t = build_preimage_tree(CHEB, 2.0, 1)
        assert sorted(t.level(1).real) == pytest.approx([-2, 2])

    def test_critical_fiber(self):
        t = build_preimage_tree(CHEB, -2.0, 1)
        assert np.allclose(t.level(1), 0, atol=1e-7)
        assert list(t.multiplicity(1)) == [2, 2]

    def test_parent_residual_and_itineraries(self, circle_tree):
        assert circle_tree.parent_residual() <= 1e-10
        its = circle_tree.itineraries(8)
        assert len({tuple(r) for r in its}) == 2 ** 8

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            build_preimage_tree(SQUARE, 1.0, 21)
        with pytest.raises(ValidationError):
            build_preimage_tree(SQUARE, 1.0, -1)

    def test_jsonl(self):
        t = build_preimage_tree(SQUARE, 1.0, 2)
        rows = [json.loads(s) for s in t.to_jsonl().splitlines()]
        assert len(rows) == 1 + 2 + 4
        assert {r["level"] for r in rows} == {0, 1, 2}
        assert rows[0]["itinerary"] == ""
        assert all(len(r["itinerary"]) == r["level"] for r in rows)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-1.5, 0.2), st.floats(-0.5, 0.5))
    def test_derivative_chain(self, a, b):
        f = Polynomial((complex(a, b), 0, 1))
        t = build_preimage_tree(f, 3.0, 4)
        # (f^4)'(z) = prod f'(f^j(z)), recomputed by forward iteration
        z = t.level(4)
        d = np.ones_like(z)
        w = z.copy()
        for _ in range(4):
            d *= f.deriv(w)
            w = f(w)
        assert np.allclose(d, t.derivs[4], rtol=1e-9)


class TestTransport:
    def test_identity(self, spec, circle_tree):
        m = transport_tree(spec, circle_tree, [0], [0])
        assert m.tree1 is circle_tree
        assert m.conjugacy_residual == 0
        assert holder_estimate(m) == 1.0

    def test_small_step(self, spec, circle_tree):
        m = transport_tree(spec, circle_tree, [0], [0.1])
        assert m.conjugacy_residual <= 1e-8
        assert conjugacy_defect(m) <= 1e-8
        # injective on every level
        for l in range(1, 9):
            z = m.tree1.level(l)
            gaps = np.abs(z[:, None] - z[None, :]) + np.eye(z.size)
            assert gaps.min() > 1e-12

    def test_moves_continuously(self, spec, circle_tree):
        a = transport_tree(spec, circle_tree, [0], [0.02])
        b = transport_tree(spec, circle_tree, [0], [0.04])
        d1 = np.max(np.abs(a.tree1.leaves - circle_tree.leaves))
        d2 = np.max(np.abs(b.tree1.leaves - a.tree1.leaves))
        assert 0 < d1 < 0.1 and 0 < d2 < 0.1

    def test_crossing_cusp_collides(self, spec, circle_tree):
        # c = 1/4 is parabolic; beyond it J is a Cantor set and the branches meet
        with pytest.raises(BranchCollision):
            transport_tree(spec, circle_tree, [0], [0.3])

    def test_check_matched(self, spec, circle_tree):
        m1 = transport_tree(spec, circle_tree, [0], [0.05])
        m2 = MatchedTree.identity(circle_tree, np.array([0]))
        check_matched(m1, m2)
        other = MatchedTree.identity(build_preimage_tree(SQUARE, 1.0, 7))
        with pytest.raises(ItineraryMismatch):
            check_matched(m1, other)


class TestHolder:
    def test_monotone(self, spec, circle_tree):
        g = [holder_estimate(transport_tree(spec, circle_tree, [0], [c])) for c in (0.2, 0.1, 0.05)]
        assert g[2] >= 0.9
        assert g[0] < g[1] < g[2] <= 1

    def test_depth_requirement(self):
        t = build_preimage_tree(SQUARE, 1.0, 3)
        with pytest.raises(ValidationError):
            holder_estimate(MatchedTree.identity(t))


class TestOrbitMotion:
    def test_identity(self):
        h = orbit_motion(CHEB, CHEB, depth=30)
        x = np.linspace(-1.9, 1.9, 7)
        assert np.max(np.abs(h(x) - x)) <= 1e-12

    def test_conjugacy(self):
        f0, f1 = CHEB, Polynomial((-1.99, 0, 1))
        h = orbit_motion(f0, f1, depth=40)
        z = np.array([0.3, -1.1, 1.7])
        assert np.max(np.abs(f1(h(z)) - h(f0(z)))) <= 1e-10

    def test_agrees_with_tree_transport(self, spec, circle_tree):
        m = transport_tree(spec, circle_tree, [0], [0.05])
        h = orbit_motion(SQUARE, spec.poly([0.05]), depth=40)
        z = circle_tree.level(6)
        assert np.max(np.abs(h(z) - m.tree1.level(6))) <= 1e-9

    def test_depth(self):
        with pytest.raises(ValidationError):
            orbit_motion(SQUARE, SQUARE, depth=0)
