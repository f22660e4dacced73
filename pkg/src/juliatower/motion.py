"""Preimage trees and their transport along parameters.

A :class:`PreimageTree` stores the complete ``D``-ary backward orbit of a
base point: node ``i`` on level ``l`` has parent ``i // D`` on level
``l - 1`` and sibling digit ``i % D``, so itineraries are the base-``D``
digits of the index.  Transporting a tree follows every node continuously in
the parameter, which realizes the holomorphic motion on the finite fiber.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BranchCollision, BudgetExceeded, ItineraryMismatch, ValidationError
from .poly import Polynomial, solve_preimages

NODE_BUDGET = 2 ** 20
COLLISION_TOL = 1e-12
AMBIGUITY_RATIO = 0.5


@dataclass
class PreimageTree:
    """Backward orbit tree of ``base`` under ``poly`` to ``depth`` levels.

    Attributes
    ----------
    points : list of ndarray
        ``points[l]`` has ``D**l`` entries; ``points[0]`` is ``[base]``.
    derivs : list of ndarray
        ``(f^l)'`` at each node of level ``l``.
    base_kind : tuple
        How the base follows the parameter: ``("critical", i)``,
        ``("periodic", p)`` or ``("fixed",)``.
    """

    poly: Polynomial
    base: complex
    depth: int
    points: list
    derivs: list
    base_kind: tuple = ("fixed",)

    @property
    def degree(self) -> int:
        return self.poly.degree

    @property
    def leaves(self) -> np.ndarray:
        return self.points[-1]

    def level(self, l: int) -> np.ndarray:
        return self.points[l]

    def itineraries(self, l: int) -> np.ndarray:
        """``(D**l, l)`` integer array of sibling digits, root side first."""
        D = self.degree
        idx = np.arange(D ** l)
        digits = np.empty((idx.size, l), dtype=np.int64)
        for j in range(l - 1, -1, -1):
            digits[:, j] = idx % D
            idx = idx // D
        return digits

    def multiplicity(self, l: int) -> np.ndarray:
        """Number of siblings coinciding with each node (critical fibers)."""
        if l == 0:
            return np.ones(1, dtype=np.int64)
        z = self.points[l].reshape(-1, self.degree)
        tol = COLLISION_TOL * max(self.poly.scale, 1.0)
        close = np.abs(z[:, :, None] - z[:, None, :]) <= tol
        return close.sum(axis=2).ravel()

    def parent_residual(self) -> float:
        """Max ``|f(z) - parent(z)|`` over all nodes."""
        worst = 0.0
        for l in range(1, self.depth + 1):
            par = np.repeat(self.points[l - 1], self.degree)
            worst = max(worst, float(np.max(np.abs(self.poly(self.points[l]) - par))))
        return worst

    def to_jsonl(self) -> str:
        lines = []
        for l in range(self.depth + 1):
            its = self.itineraries(l)
            for i, (z, d) in enumerate(zip(self.points[l], self.derivs[l])):
                lines.append(json.dumps({
                    "level": l,
                    "itinerary": "".join(str(x) for x in its[i]),
                    "point": [z.real, z.imag],
                    "derivative_product": [d.real, d.imag],
                }))
        return "\n".join(lines) + "\n"


def _classify_base(f: Polynomial, base: complex, max_period: int = 8) -> tuple:
    tol = 1e-10 * max(f.scale, 1.0)
    for i, c in enumerate(f.critical_points):
        if abs(c - base) <= tol:
            return ("critical", i)
    w = complex(base)
    for p in range(1, max_period + 1):
        w = f(w)
        if abs(w - base) <= 1e-9 * max(1.0, abs(base)):
            return ("periodic", p)
    return ("fixed",)


def build_preimage_tree(f: Polynomial, base: complex, depth: int,
                        budget: int = NODE_BUDGET, base_kind: tuple | None = None) -> PreimageTree:
    """Complete backward tree of ``base`` with chain-rule derivatives.

    Siblings keep the deterministic preimage order, with repeated roots kept
    as repeated nodes (critical fibers carry multiplicity).
    """
    if depth < 0:
        raise ValidationError("depth must be >= 0")
    D = f.degree
    if D ** depth > budget:
        raise BudgetExceeded(f"D^depth = {D ** depth} exceeds node budget {budget}")
    points = [np.array([complex(base)])]
    derivs = [np.ones(1, dtype=complex)]
    for _ in range(depth):
        z = solve_preimages(f, points[-1]).ravel()
        derivs.append(f.deriv(z) * np.repeat(derivs[-1], D))
        points.append(z)
    kind = base_kind if base_kind is not None else _classify_base(f, base)
    return PreimageTree(f, complex(base), depth, points, derivs, kind)


@dataclass
class MatchedTree:
    tree0: PreimageTree
    tree1: PreimageTree
    lambda0: np.ndarray = field(default=None)
    lambda1: np.ndarray = field(default=None)
    conjugacy_residual: float = 0.0
    steps: int = 0

    @classmethod
    def identity(cls, tree: PreimageTree, lam=None) -> "MatchedTree":
        return cls(tree, tree, lam, lam, 0.0, 0)


def _continue_base(f: Polynomial, old_base: complex, kind: tuple) -> complex:
    if kind[0] == "critical":
        return complex(f.critical_points[kind[1]])
    if kind[0] == "periodic":
        z = complex(old_base)
        for _ in range(50):
            w, d = f.iterate(np.array([z]), kind[1])
            dz = (w[0] - z) / (d[0] - 1.0)
            z -= dz
            if abs(dz) < 1e-15 * max(1.0, abs(z)):
                break
        return z
    return complex(old_base)


def _match_level(roots, old, degree, groups):
    """Choose, per child, the preimage of its new parent nearest its old value.

    Returns the matched points and whether the choice was unambiguous.
    """
    n_par = roots.shape[0]
    old = old.reshape(n_par, degree)
    dist = np.abs(old[:, :, None] - roots[:, None, :])  # (parent, child, root)
    order = np.argsort(dist, axis=2, kind="stable")
    pick = order[:, :, 0]
    d1 = np.take_along_axis(dist, order[:, :, :1], axis=2)[..., 0]
    d2 = np.take_along_axis(dist, order[:, :, 1:2], axis=2)[..., 0]
    new = np.take_along_axis(roots, pick, axis=1)
    ok = (d1 < AMBIGUITY_RATIO * d2) | groups
    # distinct children must claim distinct roots
    if degree > 1:
        srt = np.sort(pick, axis=1)
        dup = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
        dup &= ~np.any(groups, axis=1)
        ok &= ~dup[:, None]
    return new.ravel(), bool(np.all(ok))


def transport_tree(spec, tree0: PreimageTree, lambda0, lambda1, steps: int | None = None,
                   min_step: float = 1e-4) -> MatchedTree:
    """Follow every node of ``tree0`` from ``lambda0`` to ``lambda1``.

    At each parameter step the base is continued (critical point by its
    label, periodic base by Newton), and each level is re-solved with every
    child matched to the nearest preimage of its continued parent.  A step is
    halved whenever the match is ambiguous (nearest root not clearly nearer
    than the second) and :class:`BranchCollision` is raised below
    ``min_step`` or when continued siblings meet.
    """
    lam0 = np.atleast_1d(np.asarray(lambda0, dtype=complex))
    lam1 = np.atleast_1d(np.asarray(lambda1, dtype=complex))
    if np.array_equal(lam0, lam1):
        return MatchedTree(tree0, tree0, lam0, lam1, 0.0, 0)
    if steps is None:
        steps = max(1, math.ceil(float(np.linalg.norm(lam1 - lam0)) / 0.01))
    D = tree0.degree
    # coinciding siblings at lambda0 move together (critical fibers)
    groups = [tree0.multiplicity(l).reshape(-1, D) > 1 for l in range(1, tree0.depth + 1)]
    cur_pts = [p.copy() for p in tree0.points]
    s, ds = 0.0, 1.0 / steps
    n_steps = 0
    while s < 1.0:
        s_next = min(1.0, s + ds)
        f = spec.poly(lam0 + s_next * (lam1 - lam0))
        new_pts = [np.array([_continue_base(f, cur_pts[0][0], tree0.base_kind)])]
        good = True
        for l in range(1, tree0.depth + 1):
            roots = solve_preimages(f, new_pts[-1])
            pts, ok = _match_level(roots, cur_pts[l], D, groups[l - 1])
            if not ok:
                good = False
                break
            new_pts.append(pts)
        if not good:
            ds /= 2
            if ds < min_step / steps:
                raise BranchCollision(f"preimage branches collide near s={s:.6g}")
            continue
        cur_pts, s = new_pts, s_next
        n_steps += 1
    f1 = spec.poly(lam1)
    derivs = [np.ones(1, dtype=complex)]
    for l in range(1, tree0.depth + 1):
        derivs.append(f1.deriv(cur_pts[l]) * np.repeat(derivs[-1], D))
    tree1 = PreimageTree(f1, complex(cur_pts[0][0]), tree0.depth, cur_pts, derivs, tree0.base_kind)
    _check_injective(tree1, groups)
    res = tree1.parent_residual()
    return MatchedTree(tree0, tree1, lam0, lam1, res, n_steps)


def _check_injective(tree: PreimageTree, groups):
    tol = COLLISION_TOL * max(tree.poly.scale, 1.0)
    D = tree.degree
    for l in range(1, tree.depth + 1):
        z = tree.points[l].reshape(-1, D)
        for a in range(D):
            for b in range(a + 1, D):
                close = np.abs(z[:, a] - z[:, b]) <= tol
                if np.any(close & ~(groups[l - 1][:, a] & groups[l - 1][:, b])):
                    raise BranchCollision(f"continued siblings meet on level {l}")


def check_matched(m0: MatchedTree, m1: MatchedTree):
    """Both matched trees must start from the same base tree."""
    a, b = m0.tree0, m1.tree0
    if a.depth != b.depth or a.degree != b.degree:
        raise ItineraryMismatch("trees differ in depth or degree")
    if not (a is b or np.array_equal(a.leaves, b.leaves)):
        raise ItineraryMismatch("matched trees are not built on the same base tree")


def holder_estimate(m: MatchedTree) -> float:
    """Hoelder exponent of the motion from a log-log fit of pair distances.

    Pairs at the deepest level share an ancestor ``j`` generations up for
    every ``j``, so separations span all scales of the tree (plain sibling
    pairs can all sit at one scale, e.g. on the circle).
    """
    t0, t1 = m.tree0, m.tree1
    L = t0.depth
    if L < 4:
        raise ValidationError("holder_estimate needs depth >= 4")
    D = t0.degree
    z0, z1 = t0.leaves, t1.leaves
    idx = np.arange(z0.size)
    xs, ys = [], []
    for j in range(1, L + 1):
        step = D ** (j - 1)
        digit = (idx // step) % D
        partner = np.where(digit < D - 1, idx + step, idx - step)
        a = np.abs(z0[idx] - z0[partner])
        b = np.abs(z1[idx] - z1[partner])
        keep = (a > 0) & (b > 0)
        xs.append(np.log(a[keep]))
        ys.append(np.log(b[keep]))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if np.ptp(x) == 0:
        return 1.0
    slope = np.polyfit(x, y, 1)[0]
    return float(min(1.0, max(slope, np.finfo(float).tiny)))


def orbit_motion(f0: Polynomial, f1: Polynomial, depth: int = 40):
    """Motion of arbitrary points of ``J(f0)`` into ``J(f1)`` by pullback.

    The forward orbit ``z_j = f0^j(z)`` is followed back from ``z_depth``
    along ``f1``, choosing at each step the preimage nearest ``z_j``.  The
    error at the far end is contracted by the expansion along the orbit, so
    for nearby parameters the result is the holomorphic motion ``h(z)``.
    """
    if depth < 1:
        raise ValidationError("depth must be >= 1")

    def h(z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        orbit = [z]
        for _ in range(depth):
            orbit.append(f0(orbit[-1]))
        w = orbit[-1]
        for j in range(depth - 1, -1, -1):
            roots = solve_preimages(f1, w)
            pick = np.argmin(np.abs(roots - orbit[j][:, None]), axis=1)
            w = roots[np.arange(w.size), pick]
        return w

    return h
