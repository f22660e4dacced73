"""Pressure, joint pressure and Bowen dimension from preimage-tree sums.

For a base point ``b`` the fiber sums are

    S_n(t) = sum_{z in f^-n(b)} |(f^n)'(z)|^-t,

and the pressure is the growth rate of ``S_n``.  The estimator works with the
increments ``log S_n - log S_(n-1)``, which converge geometrically for the
maps in scope, and accelerates the last three with Aitken's Delta^2.  The
plain averages ``(1/n) log S_n`` are kept in ``depth_sequence``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import DegenerateFiber, NoBracket, ParamOutOfRange, ValidationError
from .motion import MatchedTree, PreimageTree, build_preimage_tree, check_matched
from .poly import Polynomial

DEFAULT_DEPTH = {2: 14, 3: 9}


def default_depth(degree: int) -> int:
    return DEFAULT_DEPTH.get(degree, max(2, int(20 // np.log2(degree))))


@dataclass
class PressureEstimate:
    value: float
    depth_sequence: list
    increments: list
    extrapolated: float
    uncertainty: float
    excluded_nodes: int = 0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "extrapolated": self.extrapolated,
            "uncertainty": self.uncertainty,
            "depth_sequence": [[n, v] for n, v in self.depth_sequence],
            "excluded_nodes": self.excluded_nodes,
        }


@dataclass
class DimensionResult:
    delta: float
    bracket: tuple
    residual: float
    uncertainty: float = 0.0
    depth: int = 0


def default_base(f: Polynomial) -> complex:
    """First critical point with a non-periodic orbit, else the most
    repelling fixed point.

    Fibers of a periodic critical point contain the critical point itself,
    where every weight with a derivative through it vanishes.
    """
    for c in f.critical_points:
        w = complex(c)
        periodic = False
        for _ in range(64):
            w = f(w)
            if abs(w) > f.escape_radius:
                break
            if abs(w - c) <= 1e-9 * max(1.0, abs(c)):
                periodic = True
                break
        if not periodic:
            return complex(c)
    from .poly import _repelling_fixed_point
    return _repelling_fixed_point(f)


def aitken(x) -> float:
    """Aitken Delta^2 on the last three terms; falls back to the last term
    when the second difference vanishes or the correction is implausible."""
    if len(x) < 3:
        return float(x[-1])
    x0, x1, x2 = x[-3:]
    den = x2 - 2 * x1 + x0
    if den == 0 or not np.isfinite(den):
        return float(x2)
    acc = x2 - (x2 - x1) ** 2 / den
    if not np.isfinite(acc) or abs(acc - x2) > 10 * abs(x2 - x1) + 1e-15:
        return float(x2)
    return float(acc)


def _log_abs(d: np.ndarray):
    a = np.abs(d)
    keep = a > 0
    return np.log(a[keep]), keep


def _estimate(log_weights_per_level: list, excluded: int) -> PressureEstimate:
    logS = []
    for lw in log_weights_per_level:
        if lw.size == 0:
            raise DegenerateFiber("all fiber weights vanish")
        logS.append(float(logsumexp(lw)))
    logS = np.array(logS)
    n = np.arange(1, logS.size + 1)
    seq = [(int(k), float(v)) for k, v in zip(n, logS / n)]
    inc = np.diff(np.concatenate([[0.0], logS]))
    ext = aitken(inc)
    unc = abs(float(inc[-1]) - ext)
    if inc.size >= 3:
        # geometric tail bound from the last two differences
        d1, d0 = abs(float(inc[-1] - inc[-2])), abs(float(inc[-2] - inc[-3]))
        r = min(d1 / d0, 0.9) if d0 > 0 else 0.0
        unc = max(unc, d1 * r / (1 - r))
    return PressureEstimate(ext, seq, [float(x) for x in inc], ext, float(unc), excluded)


def _tree_logs(tree: PreimageTree):
    logs, keeps = [], []
    for l in range(1, tree.depth + 1):
        a, keep = _log_abs(tree.derivs[l])
        logs.append(a)
        keeps.append(keep)
    return logs, keeps


def tree_pressure(tree: PreimageTree, t: float) -> PressureEstimate:
    logs, keeps = _tree_logs(tree)
    excluded = int(sum((~k).sum() for k in keeps))
    return _estimate([-t * a + (-0.0) for a in logs], excluded)


def pressure_estimate(f: Polynomial, t: float, base: complex | None = None,
                      depth: int | None = None, tree: PreimageTree | None = None) -> PressureEstimate:
    """Pressure ``p(t)`` of ``f`` from the backward tree of ``base``.

    Nodes with vanishing derivative (fibers through a critical point) are
    excluded and counted in ``excluded_nodes``.
    """
    if not 0 <= t <= 2:
        raise ValidationError("t must lie in [0, 2]")
    if tree is None:
        base = default_base(f) if base is None else base
        depth = default_depth(f.degree) if depth is None else depth
        tree = build_preimage_tree(f, base, depth)
    return tree_pressure(tree, t)


def joint_pressure(m1: MatchedTree, m2: MatchedTree, t1: float, t2: float) -> PressureEstimate:
    """Joint pressure with product weights read off two matched trees.

    ``m1`` and ``m2`` carry the motion from a common base tree at lambda0 to
    lambda1 and lambda2.  The log-weight is ``-t1*A1 + (-t2*A2)``, so
    ``t2 = 0`` reproduces :func:`pressure_estimate` bit for bit.
    """
    if t1 + t2 <= 0:
        raise ParamOutOfRange("joint pressure needs t1 + t2 > 0")
    check_matched(m1, m2)
    a1, k1 = _tree_logs(m1.tree1)
    a2, k2 = _tree_logs(m2.tree1)
    lws = []
    excluded = 0
    for l in range(len(a1)):
        keep = k1[l] & k2[l]
        excluded += int((~keep).sum())
        full1 = np.full(k1[l].shape, np.nan)
        full2 = np.full(k2[l].shape, np.nan)
        full1[k1[l]] = a1[l]
        full2[k2[l]] = a2[l]
        lws.append(-t1 * full1[keep] + (-t2 * full2[keep]))
    return _estimate(lws, excluded)


def bowen_dimension(f: Polynomial, tol: float = 1e-8, depth: int | None = None,
                    base: complex | None = None, tree: PreimageTree | None = None) -> DimensionResult:
    """Zero of the strictly decreasing map ``t -> p(t)`` on ``[0, 2]``."""
    if tol < 1e-8:
        raise ValidationError("tol must be >= 1e-8")
    if tree is None:
        base = default_base(f) if base is None else base
        depth = default_depth(f.degree) if depth is None else depth
        tree = build_preimage_tree(f, base, depth)
    p0 = tree_pressure(tree, 0.0)
    p2 = tree_pressure(tree, 2.0)
    if p0.value - p0.uncertainty <= 0 or p2.value + p2.uncertainty >= 0:
        raise NoBracket(f"p(0) = {p0.value:.6g}, p(2) = {p2.value:.6g}")
    g = lambda t: tree_pressure(tree, t).value
    delta = brentq(g, 0.0, 2.0, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
    est = tree_pressure(tree, delta)
    # propagate the pressure uncertainty through the slope -Ly
    h = 1e-4
    slope = (g(min(delta + h, 2.0)) - g(max(delta - h, 0.0))) / (min(delta + h, 2.0) - max(delta - h, 0.0))
    unc = est.uncertainty / abs(slope) if slope != 0 else np.inf
    res = abs(est.value)
    if res > tol:
        raise NoBracket(f"root residual {res:.3g} exceeds tol {tol:.3g}")
    return DimensionResult(float(delta), (0.0, 2.0), float(res), float(unc), tree.depth)


def _generic_base(f: Polynomial) -> complex:
    """Repelling periodic point (period 1 or 2) off the postcritical orbit,
    so its backward tree avoids the critical points."""
    from .poly import periodic_points
    post = []
    for c in f.critical_points:
        w = complex(c)
        for _ in range(64):
            w = f(w)
            if abs(w) > f.escape_radius:
                break
            post.append(w)
    post = np.array(post) if post else np.array([np.inf])
    for n in (1, 2):
        pts = sorted(periodic_points(f, n), key=lambda p: -abs(p.multiplier))
        for p in pts:
            if abs(p.multiplier) > 1 and np.min(np.abs(post - p.z)) > 1e-6:
                return p.z
    raise DegenerateFiber("no repelling periodic point off the postcritical set")


def base_independence(f: Polynomial, t: float, depth: int | None = None) -> dict:
    """Compare the default base with a repelling periodic base point.

    ``flag`` is set when the two estimates differ by at least ten times
    their combined uncertainty.
    """
    a = pressure_estimate(f, t, depth=depth)
    b = pressure_estimate(f, t, base=_generic_base(f), depth=depth)
    diff = abs(a.value - b.value)
    unc = a.uncertainty + b.uncertainty
    return {"default": a.value, "periodic_base": b.value, "difference": diff,
            "uncertainty": unc, "flag": bool(diff >= 10 * unc and diff > 1e-10)}


def smoothness_probe(lams, deltas) -> dict:
    """Max ``|Delta^3 delta| / h^3`` on a uniform 1-D grid (no verdict)."""
    lams = np.asarray(lams)
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size < 7:
        raise ValidationError("smoothness_probe needs at least 7 grid points")
    steps = np.diff(lams)
    h = float(np.abs(steps[0]))
    if h == 0 or not np.allclose(np.abs(steps), h, rtol=1e-9, atol=0):
        raise ValidationError("grid must be uniform")
    d3 = np.diff(deltas, 3)
    return {"h": h, "third_differences": d3.tolist(),
            "indicator": float(np.max(np.abs(d3)) / h ** 3)}
