"""Misiurewicz families: critical relations, repelling certificates,
hyperbolicity of free critical points and continuation along parameters.

A family is a map ``lambda -> Polynomial`` with marked critical points and a
list of relations ``f^n(c_i) = f^(n+m)(c_i)``.  Newton solves the relations on
the ``solved`` coordinates of the parameter vector while the remaining
coordinates are held fixed (or driven along a path).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (ContinuationStuck, NewtonDiverged, NotPeriodic, NotRepelling,
                     ValidationError)
from .poly import Polynomial, green_function

REPELLING_MARGIN = 1e-6
NEWTON_STEPS = 200
CYCLE_TOL = 1e-9
CYCLE_CAP = 64


@dataclass(frozen=True)
class Relation:
    """``f^preperiod(c_i) = f^(preperiod + period)(c_i)``."""

    crit_index: int
    preperiod: int
    period: int

    def __post_init__(self):
        if self.preperiod < 1 or self.period < 1:
            raise ValidationError("relations need preperiod >= 1 and period >= 1")


@dataclass(frozen=True)
class FamilySpec:
    """Parametrized polynomial family with critical relations.

    Parameters
    ----------
    name : str
    build : callable
        Maps a complex parameter vector of length ``ambient_dim`` to a
        :class:`Polynomial` whose ``critical_points`` follow the parameter.
    relations : tuple of Relation
    ambient_dim : int
    solved : tuple of int, optional
        Coordinates adjusted by Newton.  Defaults to the last
        ``len(relations)`` coordinates.
    """

    name: str
    build: Callable
    relations: tuple
    ambient_dim: int
    solved: tuple = None

    def __post_init__(self):
        rels = tuple(r if isinstance(r, Relation) else Relation(*r) for r in self.relations)
        object.__setattr__(self, "relations", rels)
        if self.solved is None:
            object.__setattr__(self, "solved",
                               tuple(range(self.ambient_dim - len(rels), self.ambient_dim)))
        if len(self.solved) != len(rels):
            raise ValidationError("number of relations must equal the number of solved coordinates")

    def poly(self, lam) -> Polynomial:
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        if lam.size != self.ambient_dim:
            raise ValidationError(f"{self.name}: expected {self.ambient_dim} parameters, got {lam.size}")
        return self.build(lam)

    @property
    def free(self) -> tuple:
        """Coordinates not fixed by the relations (the directions of Omega)."""
        return tuple(i for i in range(self.ambient_dim) if i not in self.solved)

    @property
    def bound_critical(self) -> set:
        return {r.crit_index for r in self.relations}


def _quadratic(lam):
    return Polynomial((lam[0], 0.0, 1.0), (0.0,))


def _cubic_pm_a(lam):
    a, b = lam
    return Polynomial((b, -3 * a * a, 0.0, 1.0), (a, -a))


def quadratic_family(relations=((0, 2, 1),)) -> FamilySpec:
    """``z^2 + c`` with critical point 0."""
    return FamilySpec("quadratic", _quadratic, tuple(relations), 1)


def cubic_pm_a_family(relations=((0, 1, 1),)) -> FamilySpec:
    """``z^3 - 3 a^2 z + b`` with critical points ``a`` (index 0) and ``-a``.

    The default relation ``f(a) = r = f(r)`` is solved for ``b`` with ``a``
    free; its closed form is ``b = 2a^3 - 2a``, ``r = -2a``, ``chi = 9a^2``.
    """
    return FamilySpec("cubic_pm_a", _cubic_pm_a, tuple(relations), 2)


BUILTIN_FAMILIES = {"quadratic": quadratic_family, "cubic_pm_a": cubic_pm_a_family}


def family_from_expression(expr: str, params: Sequence[str], relations,
                           critical: Sequence[str] | None = None, name: str = "custom") -> FamilySpec:
    """Family from a polynomial expression in ``z`` and the parameter names.

    ``critical`` optionally gives formulas for the critical points; otherwise
    they are recomputed numerically from ``f'`` (ordering then follows the
    root sorter and may relabel along paths).
    """
    import sympy

    z = sympy.Symbol("z")
    syms = sympy.symbols(list(params))
    syms = syms if isinstance(syms, (list, tuple)) else (syms,)
    local = {str(s): s for s in syms}
    local["z"] = z
    try:
        poly = sympy.Poly(sympy.sympify(expr, locals=local), z)
    except (sympy.SympifyError, sympy.PolynomialError, TypeError) as exc:
        raise ValidationError(f"cannot parse family expression {expr!r}: {exc}") from exc
    deg = poly.degree()
    coeff_exprs = [poly.coeff_monomial(z ** k) for k in range(deg + 1)]
    coeff_fns = sympy.lambdify(syms, coeff_exprs, "numpy")
    crit_fns = None
    if critical is not None:
        crit_fns = sympy.lambdify(syms, [sympy.sympify(c, locals=local) for c in critical], "numpy")

    def build(lam):
        coeffs = [complex(c) for c in coeff_fns(*lam)]
        crit = None if crit_fns is None else [complex(c) for c in crit_fns(*lam)]
        return Polynomial(tuple(coeffs), crit)

    return FamilySpec(name, build, tuple(relations), len(syms))


@dataclass
class MisiurewiczParam:
    lam: np.ndarray
    poly: Polynomial
    landing_points: tuple
    multipliers: tuple
    relation_residuals: tuple
    spec: FamilySpec = field(repr=False, default=None)

    @property
    def chi_hat(self) -> float:
        """Smallest relation multiplier modulus."""
        return float(min(abs(m) for m in self.multipliers))

    def to_dict(self) -> dict:
        return {
            "lambda": [[complex(x).real, complex(x).imag] for x in self.lam],
            "landing_points": [[r.real, r.imag] for r in self.landing_points],
            "multipliers": [[m.real, m.imag] for m in self.multipliers],
            "relation_residuals": list(self.relation_residuals),
        }


def relation_residual(spec: FamilySpec, lam) -> np.ndarray:
    """Vector ``f^n(c_i) - f^(n+m)(c_i)`` over the relations."""
    f = spec.poly(lam)
    out = np.empty(len(spec.relations), dtype=complex)
    for j, rel in enumerate(spec.relations):
        w = f.critical_points[rel.crit_index]
        for _ in range(rel.preperiod):
            w = f(w)
        v = w
        for _ in range(rel.period):
            v = f(v)
        out[j] = w - v
    return out


def multiplier_at(f: Polynomial, z: complex, period: int) -> complex:
    """``(f^period)'(z)`` for a point of that period."""
    w, d = f.iterate(np.array([complex(z)]), period)
    if abs(w[0] - z) > 1e-8 * max(f.scale, 1.0):
        raise NotPeriodic(f"|f^{period}(z) - z| = {abs(w[0] - z):.3g}")
    return complex(d[0])


def _certify(spec: FamilySpec, lam: np.ndarray) -> MisiurewiczParam:
    f = spec.poly(lam)
    res = relation_residual(spec, lam)
    landing, mults = [], []
    for rel in spec.relations:
        w = f.critical_points[rel.crit_index]
        for _ in range(rel.preperiod):
            w = f(w)
        _, d = f.iterate(np.array([w]), rel.period)
        landing.append(complex(w))
        mults.append(complex(d[0]))
    for m in mults:
        if abs(m) < 1 + REPELLING_MARGIN:
            raise NotRepelling(f"landing multiplier |chi| = {abs(m):.6g} is not repelling")
    return MisiurewiczParam(lam.copy(), f, tuple(landing), tuple(mults),
                            tuple(float(abs(r)) for r in res), spec)


def _deflated_residual(spec: FamilySpec, lam) -> np.ndarray:
    """Relation residual divided by the same relation one step earlier.

    Parameters whose critical point is already periodic (or preperiodic with
    a shorter tail) solve every longer relation with high multiplicity and
    attract Newton; the quotient removes them.
    """
    f = spec.poly(lam)
    out = np.empty(len(spec.relations), dtype=complex)
    for j, rel in enumerate(spec.relations):
        w = f.critical_points[rel.crit_index]
        for _ in range(rel.preperiod - 1):
            w = f(w)
        lower = w
        v = w
        for _ in range(rel.period):
            v = f(v)
        lower = lower - v
        out[j] = (f(w) - f(v)) / lower if lower != 0 else np.inf
    return out


def _newton(spec: FamilySpec, lam: np.ndarray, steps: int = NEWTON_STEPS) -> np.ndarray:
    lam = lam.astype(complex).copy()
    solved = list(spec.solved)
    converged = False
    for _ in range(steps):
        with np.errstate(all="ignore"):
            F = relation_residual(spec, lam)
            G = _deflated_residual(spec, lam)
            scale = spec.poly(lam).scale
        if not np.all(np.isfinite(F)):
            raise NewtonDiverged("relation residual is not finite")
        err = np.max(np.abs(F), initial=0.0)
        if converged or err <= 1e-15 * scale:
            if err <= 1e-12 * scale:
                return lam
        converged = err <= 1e-12 * scale  # one more step for good measure
        if not np.all(np.isfinite(G)):
            G = F
        J = np.empty((len(G), len(solved)), dtype=complex)
        for j, idx in enumerate(solved):
            h = 1e-7 * (1 + abs(lam[idx]))
            lp, lm = lam.copy(), lam.copy()
            lp[idx] += h
            lm[idx] -= h
            with np.errstate(all="ignore"):
                J[:, j] = (_deflated_residual(spec, lp) - _deflated_residual(spec, lm)) / (2 * h)
        if not np.all(np.isfinite(J)):
            raise NewtonDiverged("Jacobian is not finite")
        step = np.linalg.lstsq(J, G, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            raise NewtonDiverged("Newton step is not finite")
        lam[solved] -= step
    raise NewtonDiverged(f"no convergence in {steps} Newton steps")


def solve_critical_relation(spec: FamilySpec, guess) -> MisiurewiczParam:
    """Newton on the relations over ``spec.solved`` starting from ``guess``.

    Raises
    ------
    NewtonDiverged
        No convergence within 200 steps or a non-finite residual.
    NotRepelling
        A landing cycle has ``|chi| <= 1 + 1e-6``.
    """
    lam = np.atleast_1d(np.asarray(guess, dtype=complex))
    if lam.size != spec.ambient_dim:
        raise ValidationError(f"guess must have {spec.ambient_dim} components")
    if not np.all(np.isfinite(lam)):
        raise ValidationError("guess must be finite")
    return _certify(spec, _newton(spec, lam))


def _brent_cycle(f: Polynomial, z: complex, max_iter: int):
    """Brent cycle detection with approximate equality.

    Returns ``("escaped", n)``, ``("cycle", period, point)`` or ``("undecided",)``.
    """
    R = f.escape_radius
    power = lam = 1
    tortoise = complex(z)
    hare = f(tortoise)
    for n in range(max_iter):
        if abs(hare) > R:
            return ("escaped", n + 1)
        if abs(hare - tortoise) <= CYCLE_TOL * max(1.0, abs(hare)):
            return ("cycle", lam, hare)
        if power == lam:
            tortoise = hare
            power *= 2
            lam = 0
        hare = f(hare)
        lam += 1
    return ("undecided",)


def lambda_hyperbolic_check(param: MisiurewiczParam, max_iter: int = 10000) -> dict:
    """Classify the critical points not bound by a relation.

    Free/bound stands in for the passive/active distinction, which has no
    finite certificate; reports carry ``heuristic: True`` for that reason.
    """
    f = param.poly
    bound = param.spec.bound_critical if param.spec is not None else set()
    # burn-in so that slowly converging orbits are judged near their limit
    burn = max_iter // 2
    free = []
    for i, c in enumerate(f.critical_points):
        if i in bound:
            continue
        entry = {"index": i, "point": [c.real, c.imag]}
        w = complex(c)
        escaped_at = None
        for n in range(burn):
            if abs(w) > f.escape_radius:
                escaped_at = n
                break
            w = f(w)
        if escaped_at is not None:
            entry.update(status="escaped", steps=escaped_at)
        else:
            res = _brent_cycle(f, w, max_iter - burn)
            if res[0] == "escaped":
                entry.update(status="escaped", steps=burn + res[1])
            elif res[0] == "cycle" and res[1] <= CYCLE_CAP:
                p, pt = res[1], res[2]
                pt = _polish_cycle(f, pt, p)
                _, d = f.iterate(np.array([pt]), p)
                mult = complex(d[0])
                entry.update(status="attracted" if abs(mult) < 1 else "undecided",
                             period=p, cycle_point=[pt.real, pt.imag],
                             multiplier=[mult.real, mult.imag])
            else:
                entry.update(status="undecided")
        free.append(entry)
    przytycki = sum(green_function(f, c, 60) for c in f.critical_points)
    return {
        "free_critical": free,
        "lambda_hyperbolic": all(e["status"] == "attracted" for e in free),
        "przytycki_sum": przytycki,
        "heuristic": True,
    }


def _polish_cycle(f, z, p, steps=20):
    z = complex(z)
    for _ in range(steps):
        w, d = f.iterate(np.array([z]), p)
        den = d[0] - 1.0
        if den == 0:
            break
        dz = (w[0] - z) / den
        z -= dz
        if abs(dz) < 1e-15 * max(1.0, abs(z)):
            break
    return z


def family_path(spec: FamilySpec, start: MisiurewiczParam, end, steps: int,
                min_step: float = 1e-6) -> list:
    """Continue the relation solution along the straight segment to ``end``.

    The free coordinates move linearly; the solved ones are predicted by
    secant extrapolation and corrected by Newton.  Step fractions are halved
    on failure (divergence or loss of the repelling certificate) down to
    ``min_step``.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    end = np.atleast_1d(np.asarray(end, dtype=complex))
    lam0 = np.asarray(start.lam, dtype=complex)
    free = list(spec.free)
    out = []
    s, ds = 0.0, 1.0 / steps
    prev, prev_s = lam0.copy(), 0.0
    cur = lam0.copy()
    targets = [k / steps for k in range(1, steps + 1)]
    ti = 0
    while ti < len(targets):
        s_next = min(targets[ti], s + ds)
        guess = cur.copy()
        guess[free] = lam0[free] + s_next * (end[free] - lam0[free])
        if s > prev_s:
            slope = (cur - prev) / (s - prev_s)
            guess[list(spec.solved)] = cur[list(spec.solved)] + slope[list(spec.solved)] * (s_next - s)
        try:
            lam = _newton(spec, guess, steps=30)
            param = _certify(spec, lam)
        except (NewtonDiverged, NotRepelling) as exc:
            ds /= 2
            if ds < min_step:
                raise ContinuationStuck(f"step fell below {min_step} at s={s:.6g}: {exc}") from exc
            continue
        prev, prev_s = cur, s
        cur, s = lam, s_next
        if math.isclose(s, targets[ti], rel_tol=0, abs_tol=1e-15):
            out.append(param)
            ti += 1
            ds = min(1.0 / steps, 2 * ds)
    return out


def spec_from_config(cfg: dict) -> FamilySpec:
    """Family from a config mapping ``{"name": ..., "relations": [...]}`` or
    ``{"expression": ..., "params": [...], "relations": [...]}``."""
    rels = cfg.get("relations")
    if "expression" in cfg:
        return family_from_expression(cfg["expression"], cfg["params"], rels or [],
                                      cfg.get("critical"), cfg.get("name", "custom"))
    name = cfg.get("name", "quadratic")
    if name not in BUILTIN_FAMILIES:
        raise ValidationError(f"unknown family {name!r}")
    return BUILTIN_FAMILIES[name]() if rels is None else BUILTIN_FAMILIES[name](tuple(map(tuple, rels)))
