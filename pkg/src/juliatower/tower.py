"""Tower extension of a Misiurewicz polynomial.

The critical point ``c`` lands after ``s`` steps on a repelling fixed point
``r`` with multiplier ``chi``.  Around ``r`` the disk ``V_0 = B(r, rho_0)``
is in the linearization regime; around ``c`` the critical pieces are

    U_k = {|z - c| < u*}                                   for 2 <= k < s + e
    U_k = {|z - c| < u*, f^j(z) in V_0 for s <= j <= k - e}  for k >= s + e

with ``e = max(0, 3 - s)`` so that ``U_2`` is the plain disk.  ``u*`` is the
smallest radius outside of which ``|f'| >= chi_*``, so floor-one falls expand.
The tower map climbs ``(z, k) -> (z, k + 1)`` on ``U_(k+1)`` and otherwise
falls to ``(f^k(z), 1)``; distances on floor ``k`` are Euclidean distances
dilated by ``chi_*^(k-1)``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (LinearizationFailed, NotMisiurewicz, ParamOutOfRange, TruncationHit,
                     ValidationError)
from .family import MisiurewiczParam
from .poly import Polynomial, solve_preimages

MEMBERSHIP_SLACK = 1e-9
LINEARIZATION_ERROR = 0.1
DEFAULT_KMAX = 18


@dataclass(frozen=True)
class TowerPoint:
    z: complex
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("floor index must be >= 1")


@dataclass
class MotionContext:
    """Polynomial at a parameter together with the motion ``h`` from the
    base parameter (identity when ``h`` is None)."""

    poly: Polynomial
    h: object = None

    def __call__(self, z):
        return np.asarray(z, dtype=complex) if self.h is None else self.h(z)


@dataclass
class TowerModel:
    poly: Polynomial
    c: complex
    r: complex
    chi: complex
    chi_hat: float
    preperiod: int
    offset: int
    chi_star: float
    K_max: int
    rho0: float
    u_star: float
    U0_radius: float
    V_radii: np.ndarray
    U_radii: np.ndarray
    real_interval: tuple = None
    U_intervals: dict = field(default_factory=dict)
    crit_index: int = 0

    # -- membership ---------------------------------------------------------
    def in_U(self, z, k: int):
        """Strict membership in ``U_k`` (``k >= 2``); the first floor is the
        disk of radius ``U0_radius``."""
        z = np.asarray(z, dtype=complex)
        if k <= 1:
            return np.abs(z) < self.U0_radius
        inside = np.abs(z - self.c) < self.u_star * (1 - MEMBERSHIP_SLACK)
        s, e = self.preperiod, self.offset
        if k < s + e:
            return inside
        w = z.copy()
        for _ in range(s):
            w = self.poly(w)
        lim = self.rho0 * (1 - MEMBERSHIP_SLACK)
        for j in range(s, k - e + 1):
            inside = inside & (np.abs(w - self.r) < lim)
            if j < k - e:
                with np.errstate(all="ignore"):
                    w = np.where(inside, self.poly(w), w)
        return inside

    def in_V(self, z, k: int):
        """``z`` stays in ``V_0`` for ``k + 1`` consecutive steps."""
        z = np.asarray(z, dtype=complex)
        lim = self.rho0 * (1 - MEMBERSHIP_SLACK)
        ok = np.abs(z - self.r) < lim
        w = z
        for _ in range(k):
            w = self.poly(w)
            ok = ok & (np.abs(w - self.r) < lim)
        return ok

    def branch_at_r(self, w):
        """Inverse branch of ``f`` fixing ``r`` (nearest preimage to ``r``)."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        roots = solve_preimages(self.poly, w)
        idx = np.argmin(np.abs(roots - self.r), axis=1)
        return roots[np.arange(w.size), idx]

    # -- geometry ---------------------------------------------------------------
    def floor_diameter(self, k: int) -> float:
        """Diameter of floor ``k`` in the tower metric."""
        if k == 1:
            if self.real_interval is not None:
                a, b = self.real_interval
                return float(b - a)
            return 2 * self.U0_radius
        return self.chi_star ** (k - 1) * 2 * float(self.U_radii[k])

    def tail_bound(self, t: float) -> float:
        """``sum_{k > K_max} (chi_*/sqrt(chi_hat))^(k t)``."""
        q = (self.chi_star / math.sqrt(self.chi_hat)) ** t
        return float(q ** (self.K_max + 1) / (1 - q))

    def geometry_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# kind,k,center_re,center_im,radius\n")
        for k in range(len(self.V_radii)):
            buf.write(f"V,{k},{self.r.real!r},{self.r.imag!r},{float(self.V_radii[k])!r}\n")
        for k in range(2, len(self.U_radii)):
            buf.write(f"U,{k},{self.c.real!r},{self.c.imag!r},{float(self.U_radii[k])!r}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "c": [self.c.real, self.c.imag], "r": [self.r.real, self.r.imag],
            "chi": [self.chi.real, self.chi.imag], "chi_hat": self.chi_hat,
            "preperiod": self.preperiod, "offset": self.offset,
            "chi_star": self.chi_star, "K_max": self.K_max, "rho0": self.rho0,
            "u_star": self.u_star, "U0_radius": self.U0_radius,
        }


def _linearization_radius(f: Polynomial, r: complex, chi: complex, cap: float) -> float:
    theta = np.exp(2j * np.pi * (np.arange(64) + 0.5) / 64)

    def ok(rho):
        z = r + rho * theta
        err = np.abs(f(z) - r - chi * (z - r))
        return bool(np.all(err <= LINEARIZATION_ERROR * abs(chi) * rho))

    radii = np.geomspace(1e-8, cap, 200)
    good = [ok(x) for x in radii]
    if not good[0]:
        raise LinearizationFailed("no disk around the landing point is in the linear regime")
    first_bad = next((i for i, g in enumerate(good) if not g), None)
    if first_bad is None:
        return float(cap)
    lo, hi = radii[first_bad - 1], radii[first_bad]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return float(lo)


def _expansion_radius(f: Polynomial, c: complex, chi_star: float, cap: float) -> float:
    """Smallest ``u`` with ``|f'| >= chi_*`` on ``|z - c| = u`` and beyond
    (checked on circles up to ``cap``)."""
    theta = np.exp(2j * np.pi * (np.arange(128) + 0.5) / 128)
    target = chi_star * (1 + 1e-3)

    def ok(u):
        return bool(np.min(np.abs(f.deriv(c + u * theta))) >= target)

    radii = np.linspace(cap, 1e-6, 400)
    last_ok = None
    for u in radii:
        if ok(u):
            last_ok = u
        else:
            break
    if last_ok is None:
        raise LinearizationFailed("f' does not reach chi_* near the critical point")
    lo, hi = u, last_ok
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return float(hi)


def _ray_radius(model: TowerModel, k: int, direction: complex, rmax: float) -> float:
    """Distance from ``c`` to the boundary of ``U_k`` along a ray."""
    ts = np.linspace(0, rmax, 2001)[1:]
    inside = model.in_U(model.c + ts * direction, k)
    if inside.all():
        return float(rmax)
    i = int(np.argmin(inside))
    lo = ts[i - 1] if i > 0 else 0.0
    hi = ts[i]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if model.in_U(np.array([model.c + mid * direction]), k)[0]:
            lo = mid
        else:
            hi = mid
    return float(lo)


def _real_julia_hull(f: Polynomial, depth: int = 12):
    from .motion import build_preimage_tree
    from .poly import _repelling_fixed_point
    if np.max(np.abs(np.imag(f.coef_array))) > 0:
        return None
    tree = build_preimage_tree(f, _repelling_fixed_point(f), depth)
    leaves = tree.leaves
    if np.max(np.abs(leaves.imag)) > 1e-8 * max(1.0, f.scale):
        return None
    return float(leaves.real.min()), float(leaves.real.max())


def default_chi_star(chi_hat: float) -> float:
    """Geometric midpoint ``chi_hat^(1/4)`` of the legal interval."""
    return float(chi_hat ** 0.25)


def validate_chi_star(chi_star: float, chi_hat: float):
    if not (chi_star > 1 + 1e-6 and chi_star ** 2 < chi_hat - 1e-6):
        raise ParamOutOfRange(
            f"chi_star must satisfy 1 < chi_star < sqrt(chi_hat) = {math.sqrt(chi_hat):.6g}; got {chi_star}")


def build_tower(param: MisiurewiczParam, chi_star: float | None = None, K_max: int = DEFAULT_KMAX,
                relation: int = 0) -> TowerModel:
    """Tower model for the relation ``relation`` of a certified parameter.

    Raises
    ------
    NotMisiurewicz
        The relation is not a landing on a repelling fixed point.
    LinearizationFailed
        No linearization disk or critical disk could be found.
    """
    if not isinstance(param, MisiurewiczParam):
        raise NotMisiurewicz("build_tower needs a certified MisiurewiczParam")
    if K_max < 4:
        raise ValidationError("K_max must be >= 4")
    rel = param.spec.relations[relation] if param.spec is not None else None
    f = param.poly
    if rel is None or rel.period != 1:
        raise NotMisiurewicz("the tower needs a critical point landing on a fixed point")
    if max(param.relation_residuals) > 1e-9 * max(f.scale, 1.0):
        raise NotMisiurewicz("relation residual too large")
    c = complex(f.critical_points[rel.crit_index])
    r = complex(param.landing_points[relation])
    chi = complex(param.multipliers[relation])
    chi_hat = abs(chi)
    if chi_hat <= 1 + 1e-6:
        raise NotMisiurewicz("landing point is not repelling")
    chi_star = default_chi_star(chi_hat) if chi_star is None else float(chi_star)
    validate_chi_star(chi_star, chi_hat)
    s = rel.preperiod
    e = max(0, 3 - s)
    crit_dist = min(abs(cc - r) for cc in f.critical_points)
    rho0 = _linearization_radius(f, r, chi, 0.9 * crit_dist)
    U0 = f.escape_radius
    hull = _real_julia_hull(f)
    u_cap = 0.9 * abs(c - r) if hull is None else 0.9 * max(abs(hull[0] - c), abs(hull[1] - c))
    u_star = _expansion_radius(f, c, chi_star, u_cap)
    # V_k radii by pulling the boundary circle back along the branch at r
    theta = np.exp(2j * np.pi * np.arange(64) / 64)
    model = TowerModel(f, c, r, chi, chi_hat, s, e, chi_star, K_max, rho0, u_star, U0,
                       np.zeros(0), np.zeros(0), hull, {}, rel.crit_index)
    ring = r + rho0 * theta
    V = [rho0]
    for _ in range(K_max + 1):
        ring = model.branch_at_r(ring)
        V.append(float(np.max(np.abs(ring - r))))
    model.V_radii = np.array(V)
    # U_k radii by bisection along rays from c
    U = np.full(K_max + 2, np.nan)
    U[1] = U0
    dirs = np.exp(2j * np.pi * np.arange(16) / 16) if hull is None else np.array([1.0, -1.0])
    for k in range(2, K_max + 2):
        if k < s + e:
            U[k] = u_star
            if hull is not None:
                model.U_intervals[k] = (c.real - u_star, c.real + u_star)
            continue
        rmax = u_star if k == s + e else 1.5 * U[k - 1]
        radii = [_ray_radius(model, k, d, min(rmax, u_star)) for d in dirs]
        U[k] = max(radii)
        if hull is not None:
            model.U_intervals[k] = (c.real - radii[1], c.real + radii[0])
    model.U_radii = U
    return model


def floor_membership(model: TowerModel, z: complex, k: int) -> bool:
    """Whether ``z`` lies in ``U_(k+1)`` (the climb set of floor ``k``).
    Boundary points are non-members."""
    if not 1 <= k <= model.K_max:
        raise ValidationError("floor index out of range")
    return bool(model.in_U(np.array([complex(z)]), k + 1)[0])


def tower_map(model: TowerModel, p: TowerPoint) -> TowerPoint:
    if floor_membership(model, p.z, p.k) if p.k <= model.K_max else False:
        if p.k + 1 > model.K_max:
            raise TruncationHit(f"climb from floor {p.k} exceeds K_max = {model.K_max}")
        return TowerPoint(p.z, p.k + 1)
    w, _ = model.poly.iterate(np.array([p.z]), p.k)
    return TowerPoint(complex(w[0]), 1)


def tower_distance(model: TowerModel, p: TowerPoint, q: TowerPoint) -> float:
    if p.k != q.k:
        return math.inf
    return model.chi_star ** (p.k - 1) * abs(p.z - q.z)


def fall_weight(model: TowerModel, z, k: int, ctx: MotionContext | None = None) -> np.ndarray:
    """``chi_*^(1-k) |(f_lambda^k)'(h_lambda(z))|`` elementwise."""
    z = np.asarray(z, dtype=complex)
    if ctx is None:
        f, hz = model.poly, z
    else:
        f, hz = ctx.poly, ctx(z)
    _, d = f.iterate(hz, k)
    return model.chi_star ** (1 - k) * np.abs(d)


def weight_R(model: TowerModel, p: TowerPoint, ctx: MotionContext | None = None,
             truncate: bool = False) -> float:
    """Climb weight ``chi_*`` or fall weight at ``p``.

    With ``truncate`` the climb set of floor ``K_max`` is treated as falling,
    as in the truncated operator.
    """
    climbs = p.k < model.K_max or not truncate
    if climbs and model.in_U(np.array([p.z]), p.k + 1)[0]:
        return float(model.chi_star)
    return float(fall_weight(model, np.array([p.z]), p.k, ctx)[0])


@dataclass
class PreimageBranch:
    point: TowerPoint
    tag: str


def _roots_of_iterate(f: Polynomial, x: complex, n: int) -> np.ndarray:
    w = np.array([complex(x)])
    for _ in range(n):
        w = solve_preimages(f, w).ravel()
    return w


def fall_preimages(model: TowerModel, x, k: int, real_only: bool = False) -> tuple:
    """All ``y`` on floor ``k`` with ``T(y, k) = (x, 1)`` for a batch ``x``.

    Returns ``(y, owner)`` where ``owner`` indexes ``x``.  Floor ``K_max``
    includes its climb set (truncation).
    """
    f = model.poly
    x = np.atleast_1d(np.asarray(x, dtype=complex))
    s, e = model.preperiod, model.offset
    top = k == model.K_max
    owner_all = np.arange(x.size)
    if k < s + e:
        cand = x
        own = owner_all
        for _ in range(k):
            cand = solve_preimages(f, cand).ravel()
            own = np.repeat(own, f.degree)
    else:
        # the last e steps end in V_0 \ V_1, before that the orbit follows r
        w, own = x, owner_all
        for _ in range(e):
            w = solve_preimages(f, w).ravel()
            own = np.repeat(own, f.degree)
        keep = model.in_V(w, 0)
        if not top:
            keep &= ~model.in_V(w, 1)
        w, own = w[keep], own[keep]
        for _ in range(k - e - s):
            w = model.branch_at_r(w) if w.size else w
        cand = w
        for _ in range(s):
            cand = solve_preimages(f, cand).ravel() if cand.size else cand
            own = np.repeat(own, f.degree)
    if cand.size == 0:
        return cand, own
    if k == 1:
        keep = model.in_U(cand, 1)
    else:
        keep = model.in_U(cand, k)
    if not top:
        keep &= ~model.in_U(cand, k + 1)
    if real_only:
        keep &= np.abs(cand.imag) <= 1e-9 * max(1.0, model.poly.scale)
        cand = np.where(keep, cand.real + 0j, cand)
    return cand[keep], own[keep]


def enumerate_tower_preimages(model: TowerModel, x: TowerPoint, t: float = 1.0) -> dict:
    """Tower preimages of ``x`` with branch tags and the truncation tail.

    Returns ``{"preimages": [PreimageBranch], "tail_bound": float,
    "defects": int}``.
    """
    out = []
    defects = 0
    if x.k >= 2:
        if not model.in_U(np.array([x.z]), x.k)[0]:
            raise ValidationError("point is not on its floor")
        out.append(PreimageBranch(TowerPoint(x.z, x.k - 1), "climb"))
    else:
        for k in range(1, model.K_max + 1):
            try:
                ys, _ = fall_preimages(model, x.z, k)
            except Exception:  # root-finding failure on one branch
                defects += 1
                continue
            for y in ys:
                out.append(PreimageBranch(TowerPoint(complex(y), k), f"fall{k}"))
    return {"preimages": out, "tail_bound": model.tail_bound(t), "defects": defects}


def kappa_bound(gamma: float, chi_star: float, chi_hat: float) -> float:
    """Largest ``kappa`` with ``chi_* < chi_hat^((gamma - kappa) / (2 (1 - kappa)))``."""
    q = math.log(chi_star) / math.log(chi_hat)
    if 2 * q >= gamma:
        return 0.0
    return float((gamma - 2 * q) / (1 - 2 * q))


def local_expansion(model: TowerModel, z, k: int) -> np.ndarray:
    """Derivative of ``T`` in the tower metric for the untruncated map."""
    z = np.asarray(z, dtype=complex)
    climb = model.in_U(z, k + 1)
    out = np.full(z.shape, model.chi_star, dtype=float)
    if np.any(~climb):
        out[~climb] = fall_weight(model, z[~climb], k)
    return out


def distortion_ratio(model: TowerModel, z, k: int, n: int):
    """``|(T^n)''| / |(T^n)'|^2`` along forward tower orbits of ``(z, k)``.

    Climbs are affine in the dilated coordinates; a fall from floor ``j`` is
    ``f^j`` with the ``chi_*`` scalings, whose distortion ratio equals that
    of ``f^j``.  Compositions use
    ``(g o h)''/(g o h)'^2 = g''/g'^2 + h''/(h'^2 g'(h))``.
    Orbits reaching ``K_max`` by climbing are marked invalid.
    """
    f = model.poly
    z = np.asarray(z, dtype=complex).copy()
    floor = np.full(z.shape, k)
    ratio = np.zeros(z.shape, dtype=complex)
    deriv = np.ones(z.shape, dtype=float)
    valid = np.ones(z.shape, dtype=bool)
    for _ in range(n):
        new_z = z.copy()
        new_floor = floor.copy()
        for j in np.unique(floor):
            sel = floor == j
            climb = model.in_U(z[sel], j + 1)
            idx = np.nonzero(sel)[0]
            ci, fi = idx[climb], idx[~climb]
            if ci.size:
                new_floor[ci] = j + 1
                valid[ci] &= j + 1 <= model.K_max
                ratio[ci] = ratio[ci] / model.chi_star
                deriv[ci] *= model.chi_star
            if fi.size:
                w, d1, d2 = f.iterate2(z[fi], j)
                g1 = model.chi_star ** (1 - j) * d1
                # g''/g'^2 in dilated coordinates equals f^j''/f^j'^2
                ratio[fi] = d2 / d1 ** 2 + ratio[fi] / g1
                deriv[fi] *= np.abs(g1)
                new_z[fi] = w
                new_floor[fi] = 1
        z, floor = new_z, new_floor
    return np.abs(ratio), deriv, valid
