"""Polynomial dynamics primitives.

Evaluation, orbits with chain-rule derivatives, batched root solving for
preimages, periodic points, Green functions and Lyapunov exponents.  All
functions are pure; :class:`Polynomial` is immutable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, RootFindingFailed, ValidationError

PERIODIC_BUDGET = 2 ** 16
ABERTH_LIMIT = 4096
# symbolic expansion of f^n loses range beyond this degree
SYMBOLIC_LIMIT = 32
_ANGLE_OFFSET = 0.4  # breaks the symmetry of the initial circle


def _sort_roots(roots: np.ndarray) -> np.ndarray:
    """Lexicographic (real, imag) order along the last axis, stable under
    sub-1e-12 noise in the real part."""
    key_re = np.round(roots.real, 12)
    key_im = np.round(roots.imag, 12)
    if roots.ndim == 1:
        return roots[np.lexsort((key_im, key_re))]
    out = np.empty_like(roots)
    for i in range(roots.shape[0]):
        out[i] = roots[i][np.lexsort((key_im[i], key_re[i]))]
    return out


def _sort_rows(roots: np.ndarray) -> np.ndarray:
    if roots.shape[1] == 2:
        # fast path for quadratics
        a, b = roots[:, 0], roots[:, 1]
        ka, kb = np.round(a.real, 12), np.round(b.real, 12)
        swap = (kb < ka) | ((kb == ka) & (np.round(b.imag, 12) < np.round(a.imag, 12)))
        out = roots.copy()
        out[swap, 0], out[swap, 1] = b[swap], a[swap]
        return out
    return _sort_roots(roots)


def aberth_roots(coeffs: np.ndarray, maxiter: int = 500, tol: float = 1e-15):
    """Simultaneous Aberth-Ehrlich iteration on a batch of polynomials.

    Parameters
    ----------
    coeffs : (N, D+1) complex array
        Coefficients, constant term first, one polynomial per row.  All rows
        must share the degree ``D``.

    Returns
    -------
    roots : (N, D) complex array, rows sorted lexicographically.
    converged : (N,) bool array
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    n_poly, deg1 = coeffs.shape
    deg = deg1 - 1
    if deg < 1:
        raise ValidationError("polynomial degree must be at least 1")
    lead = coeffs[:, -1]
    monic = coeffs / lead[:, None]
    radius = 1.0 + np.max(np.abs(monic[:, :-1]), axis=1)
    angles = 2 * np.pi * np.arange(deg) / deg + _ANGLE_OFFSET
    z = radius[:, None] * np.exp(1j * angles)[None, :]
    if deg == 1:
        return (-monic[:, :1]).copy(), np.ones(n_poly, dtype=bool)
    dcoef = monic[:, 1:] * np.arange(1, deg1)[None, :]
    active = np.ones(n_poly, dtype=bool)
    eye = np.eye(deg, dtype=bool)
    for _ in range(maxiter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        za = z[idx]
        p = np.zeros_like(za)
        dp = np.zeros_like(za)
        for k in range(deg, -1, -1):
            p = p * za + monic[idx, k][:, None]
        for k in range(deg - 1, -1, -1):
            dp = dp * za + dcoef[idx, k][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = p / dp
            diff = za[:, :, None] - za[:, None, :]
            diff[:, eye] = 1.0
            inv = 1.0 / diff
            inv[:, eye] = 0.0
            s = inv.sum(axis=2)
            step = ratio / (1.0 - ratio * s)
        step = np.where(np.isfinite(step), step, 0.0)
        step = np.where(p == 0, 0.0, step)
        z[idx] = za - step
        done = np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(za)), axis=1)
        active[idx[done]] = False
    return _sort_rows(z), ~active


@dataclass(frozen=True)
class Polynomial:
    """Complex polynomial with marked critical points.

    ``coeffs`` holds the constant term first.  Critical points are the roots
    of the derivative with multiplicity, unless supplied explicitly (families
    mark them by formula so that labels follow the parameter).
    """

    coeffs: tuple
    critical_points: tuple = field(default=None)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size < 3:
            raise ValidationError("need degree >= 2 (at least three coefficients)")
        if abs(c[-1]) == 0:
            raise ValidationError("leading coefficient must be nonzero")
        object.__setattr__(self, "coeffs", tuple(complex(x) for x in c))
        if self.critical_points is None:
            crit = self._derivative_roots()
        else:
            crit = tuple(complex(x) for x in self.critical_points)
            if len(crit) != len(c) - 2:
                raise ValidationError("need exactly D-1 critical points")
        object.__setattr__(self, "critical_points", tuple(crit))

    def _derivative_roots(self):
        d = np.asarray(self.coeffs[1:]) * np.arange(1, len(self.coeffs))
        if d.size == 2:
            return (complex(-d[0] / d[1]),)
        roots, ok = aberth_roots(d[None, :])
        return tuple(complex(x) for x in roots[0])

    # -- basic data ---------------------------------------------------------
    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def coef_array(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=complex)

    @property
    def leading(self) -> complex:
        return self.coeffs[-1]

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.coef_array)))

    @property
    def escape_radius(self) -> float:
        return 2.0 + self.scale

    # -- evaluation ---------------------------------------------------------
    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        acc = np.zeros_like(z)
        for a in reversed(self.coeffs):
            acc = acc * z + a
        return acc if acc.ndim else complex(acc)

    def deriv(self, z):
        z = np.asarray(z, dtype=complex)
        acc = np.zeros_like(z)
        for k in range(self.degree, 0, -1):
            acc = acc * z + k * self.coeffs[k]
        return acc if acc.ndim else complex(acc)

    def deriv2(self, z):
        z = np.asarray(z, dtype=complex)
        acc = np.zeros_like(z)
        for k in range(self.degree, 1, -1):
            acc = acc * z + k * (k - 1) * self.coeffs[k]
        return acc if acc.ndim else complex(acc)

    def iterate(self, z, n: int):
        """Return ``(f^n(z), (f^n)'(z))`` elementwise."""
        z = np.asarray(z, dtype=complex)
        d = np.ones_like(z)
        for _ in range(n):
            d = d * self.deriv(z)
            z = self(z)
        return z, d

    def iterate2(self, z, n: int):
        """Return ``f^n``, its first and second derivatives at ``z``."""
        z = np.asarray(z, dtype=complex)
        d1 = np.ones_like(z)
        d2 = np.zeros_like(z)
        for _ in range(n):
            fp = self.deriv(z)
            fpp = self.deriv2(z)
            d2 = fpp * d1 * d1 + fp * d2
            d1 = fp * d1
            z = self(z)
        return z, d1, d2

    # -- serialization ------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({"coeffs": [[c.real, c.imag] for c in self.coeffs]})

    @classmethod
    def from_json(cls, text: str) -> "Polynomial":
        data = json.loads(text) if isinstance(text, str) else text
        return cls(tuple(complex(re, im) for re, im in data["coeffs"]))

    @classmethod
    def quadratic(cls, c: complex) -> "Polynomial":
        return cls((complex(c), 0.0, 1.0), (0.0,))


@dataclass(frozen=True)
class OrbitRecord:
    points: tuple
    derivative_product: complex
    escaped: bool

    def to_json(self) -> str:
        return json.dumps({
            "points": [[p.real, p.imag] for p in self.points],
            "derivative_product": [self.derivative_product.real, self.derivative_product.imag],
            "escaped": self.escaped,
        })


def evaluate_orbit(f: Polynomial, z: complex, n: int, escape_radius: float | None = None) -> OrbitRecord:
    """Iterate ``n`` times, stopping at the first point beyond ``escape_radius``.

    The escaping point is kept as the last entry of ``points``; the
    derivative product covers every step actually taken.
    """
    if n < 0:
        raise ValidationError("n must be >= 0")
    R = f.escape_radius if escape_radius is None else escape_radius
    z = complex(z)
    pts = [z]
    d = 1.0 + 0j
    escaped = abs(z) > R
    for _ in range(n):
        if escaped:
            break
        d *= f.deriv(z)
        z = f(z)
        pts.append(z)
        escaped = abs(z) > R
    return OrbitRecord(tuple(pts), complex(d), bool(escaped))


def solve_preimages(f: Polynomial, w) -> np.ndarray:
    """All ``D`` solutions of ``f(z) = w`` for every entry of ``w``.

    Returns an ``(N, D)`` array with lexicographically sorted rows.
    """
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    coef = np.tile(f.coef_array, (w.size, 1))
    coef[:, 0] -= w
    if f.degree == 2:
        roots, ok = _quadratic_roots(coef), np.ones(w.size, dtype=bool)
    else:
        roots, ok = aberth_roots(coef)
    res = np.abs(f(roots) - w[:, None])
    tol = 1e-10 * max(f.scale, 1.0) * np.maximum(1.0, np.abs(w))[:, None]
    bad = ~ok | np.any(res > tol, axis=1)
    for i in np.nonzero(bad)[0]:
        r = np.roots(coef[i][::-1])
        r = _newton_polish(f, r, w[i])
        if np.any(np.abs(f(r) - w[i]) > tol[i, 0]):
            raise RootFindingFailed(f"preimage solve failed for w={w[i]!r}")
        roots[i] = _sort_roots(r)
    return roots


def _quadratic_roots(coef):
    c, b, a = coef[:, 0], coef[:, 1], coef[:, 2]
    h = -b / (2 * a)
    r = np.sqrt(h * h - c / a)
    return _sort_rows(np.stack([h - r, h + r], axis=1))


def _newton_polish(f, z, w, steps=3):
    z = np.asarray(z, dtype=complex).copy()
    for _ in range(steps):
        dp = f.deriv(z)
        ok = np.abs(dp) > 1e-300
        z[ok] -= (f(z[ok]) - w) / dp[ok]
    return z


def preimages(f: Polynomial, w: complex) -> list:
    """The ``D`` preimages of ``w`` (with multiplicity), sorted by (re, im)."""
    return [complex(x) for x in solve_preimages(f, w)[0]]


@dataclass(frozen=True)
class PeriodicPoint:
    z: complex
    multiplier: complex


def _repelling_fixed_point(f: Polynomial) -> complex:
    coef = f.coef_array.copy()
    coef[1] -= 1.0
    roots, _ = aberth_roots(coef[None, :])
    mult = np.abs(f.deriv(roots[0]))
    return complex(roots[0][int(np.argmax(mult))])


def _aberth_iterated(f, n, z, maxiter=300, chunk=1024):
    """Aberth iteration on ``f^n(z) - z`` with ``f^n`` evaluated by iteration.

    The repulsion term keeps simultaneous iterates on distinct roots, which
    plain Newton from nearby seeds does not guarantee.
    """
    z = np.asarray(z, dtype=complex).copy()
    N = z.size
    # seeds coincide when the critical point lies in the preimage tree
    golden = 2 * np.pi * 0.6180339887498949
    z += 1e-6 * (1 + np.abs(z)) * np.exp(1j * golden * np.arange(N))
    active = np.ones(N, dtype=bool)
    for _ in range(maxiter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        with np.errstate(all="ignore"):
            fz, d = f.iterate(z[idx], n)
            ratio = (fz - z[idx]) / (d - 1.0)
            s = np.empty(idx.size, dtype=complex)
            for a in range(0, idx.size, chunk):
                sl = idx[a:a + chunk]
                diff = z[sl][:, None] - z[None, :]
                diff[np.arange(sl.size), sl] = np.inf
                s[a:a + chunk] = np.sum(1.0 / diff, axis=1)
            step = ratio / (1.0 - ratio * s)
        step = np.where(np.isfinite(step), step, 0.0)
        z[idx] -= step
        done = np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(z[idx]))
        active[idx[done]] = False
    return z


def _iterate_newton(f, z, n, steps=60):
    """Newton on ``f^n(z) - z``; non-finite iterates are frozen."""
    z = np.asarray(z, dtype=complex).copy()
    for _ in range(steps):
        with np.errstate(all="ignore"):
            fz, d = f.iterate(z, n)
            step = (fz - z) / (d - 1.0)
        good = np.isfinite(step) & (np.abs(step) < 10.0)
        z[good] -= step[good]
        if np.all(np.abs(step[good]) < 1e-15 * np.maximum(1.0, np.abs(z[good]))):
            break
    return z


def _deflated_newton(f, n, z0, found, steps=200):
    z = complex(z0)
    for _ in range(steps):
        with np.errstate(all="ignore"):
            fz, d = f.iterate(np.array([z]), n)
            F = fz[0] - z
            if F == 0:
                return z
            dF = d[0] - 1.0
            defl = np.sum(1.0 / (z - found)) if found.size else 0.0
            step = 1.0 / (dF / F - defl)
        if not np.isfinite(step):
            return None
        z -= step
        if abs(step) < 1e-15 * max(1.0, abs(z)):
            return z
    return None


def periodic_points(f: Polynomial, n: int, budget: int = PERIODIC_BUDGET) -> list:
    """Roots of ``f^n(z) = z`` with multiplicity, paired with ``(f^n)'(z)``.

    Low degrees ``D^n`` expand ``f^n`` symbolically; higher ones run Aberth or Newton from
    level-``n`` preimages of a repelling fixed point and recover what those
    seeds miss (attracting cycles, duplicates) by deflation.
    """
    if n < 1:
        raise ValidationError("period must be >= 1")
    D = f.degree
    total = D ** n
    if total > budget:
        raise BudgetExceeded(f"D^n = {total} exceeds periodic-point budget {budget}")
    if total <= SYMBOLIC_LIMIT:
        poly = np.polynomial.Polynomial(f.coef_array)
        comp = np.polynomial.Polynomial([0.0, 1.0])
        for _ in range(n):
            comp = poly(comp)
        coef = comp.coef.astype(complex)
        coef[1] -= 1.0
        roots, _ = aberth_roots(coef[None, :])
        z = _iterate_newton(f, roots[0], n, steps=4)
        # Newton can jump branches near multiple roots; keep Aberth values then
        fz, _ = f.iterate(z, n)
        fr, _ = f.iterate(roots[0], n)
        z = np.where(np.abs(fz - z) <= np.abs(fr - roots[0]), z, roots[0])
    else:
        seeds = _preimage_leaves(f, _repelling_fixed_point(f), n)
        if total <= ABERTH_LIMIT:
            z = _aberth_iterated(f, n, seeds)
        else:
            z = _iterate_newton(f, seeds, n)
            z = _dedupe_and_fill(f, n, z, total)
    fz, mult = f.iterate(z, n)
    res = np.abs(fz - z)
    tol = 1e-8 * max(f.scale, 1.0) * np.maximum(1.0, np.abs(z))
    if np.any(res > tol):
        raise RootFindingFailed(f"periodic points of period {n}: residual {res.max():.3g}")
    z = _sort_roots(z)
    _, mult = f.iterate(z, n)
    return [PeriodicPoint(complex(a), complex(m)) for a, m in zip(z, mult)]


def _preimage_leaves(f, base, depth):
    level = np.array([complex(base)])
    for _ in range(depth):
        level = solve_preimages(f, level).ravel()
    return level


def _dedupe_and_fill(f, n, z, total):
    fz, _ = f.iterate(z, n)
    ok = np.isfinite(z) & (np.abs(fz - z) <= 1e-8 * max(f.scale, 1.0) * np.maximum(1, np.abs(z)))
    order = np.argsort(z.real, kind="stable")
    kept = []
    for i in order:
        if not ok[i]:
            continue
        zi = z[i]
        if kept and np.min(np.abs(np.array(kept[-64:]) - zi)) < 1e-8 * (1 + abs(zi)):
            continue
        kept.append(zi)
    found = np.unique(np.array(kept, dtype=complex))
    if found.size > total:
        raise RootFindingFailed("more periodic points than the degree allows")
    if found.size < total:
        cands = []
        for c in f.critical_points:
            w, _ = f.iterate(np.array([c]), 500)
            if np.isfinite(w[0]) and abs(w[0]) < f.escape_radius:
                cands.append(w[0])
        cands += list(z[~ok]) + [0.0, 0.5, -0.5, 0.5j, -0.5j]
        cands += list(found[:: max(1, found.size // 32)] + 1e-3)
        for c in cands:
            if found.size >= total:
                break
            r = _deflated_newton(f, n, c, found)
            if r is not None and np.isfinite(r):
                fr, _ = f.iterate(np.array([r]), n)
                if abs(fr[0] - r) <= 1e-8 * max(f.scale, 1.0) * max(1.0, abs(r)):
                    found = np.append(found, r)
        if found.size < total:
            raise RootFindingFailed(f"found {found.size} of {total} period-{n} points")
    return found


def green_function(f: Polynomial, z: complex, depth: int = 60, return_diagnostics: bool = False):
    """Escape-rate Green function ``lim D^-n log max(1, |f^n z|)``.

    Once the orbit leaves the escape radius it is followed until
    ``|f^n z| > 1e8`` and the constant ``log|a_D| / (D-1)`` of the Böttcher
    asymptotics is added, so the truncation error is ``O(D^-n / |f^n z|)``.
    Returns 0 for orbits that stay bounded within ``depth`` steps.
    """
    if depth < 1:
        raise ValidationError("depth must be >= 1")
    D = f.degree
    shift = math.log(abs(f.leading)) / (D - 1)
    R = f.escape_radius
    w = complex(z)
    estimates = []
    n = 0
    while n < depth and abs(w) <= R:
        w = f(w)
        n += 1
    if abs(w) <= R:
        return (0.0, {"escaped": False, "steps": n}) if return_diagnostics else 0.0
    while abs(w) < 1e8:
        estimates.append((math.log(abs(w)) + shift) / D ** n)
        w = f(w)
        n += 1
    estimates.append((math.log(abs(w)) + shift) / D ** n)
    # one refinement step past the cutoff
    w = f(w)
    n += 1
    g = (math.log(abs(w)) + shift) / D ** n
    estimates.append(g)
    g = max(g, 0.0)
    if return_diagnostics:
        return g, {"escaped": True, "steps": n, "sequence": estimates,
                   "last_change": abs(estimates[-1] - estimates[-2])}
    return g


def lyapunov_exponent(f: Polynomial, method: str = "przytycki", n_or_depth: int = 60) -> float:
    """Lyapunov exponent of the maximal-entropy measure.

    ``method="periodic"`` averages ``log|f'|`` over the repelling period-``n``
    points.  Non-repelling cycles lie off the Julia set (or on a parabolic
    set) and are dropped; dividing by the number of points kept rather than
    ``D^n`` removes the resulting ``O(D^-n)`` bias.  ``"przytycki"`` uses
    ``log D + sum_j G(c_j)``.
    """
    D = f.degree
    if method == "periodic":
        pts = periodic_points(f, n_or_depth)
        z = np.array([p.z for p in pts])
        dz = np.abs(f.deriv(z))
        mult = np.array([abs(p.multiplier) for p in pts])
        dz = dz[(dz > 0) & (mult > 1.0)]
        if dz.size == 0:
            raise RootFindingFailed(f"no repelling points of period {n_or_depth}")
        return float(np.mean(np.log(dz)))
    if method == "przytycki":
        return math.log(D) + sum(green_function(f, c, n_or_depth) for c in f.critical_points)
    raise ValidationError(f"unknown method {method!r}")
