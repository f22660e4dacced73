"""Weil-Petersson type metric on Misiurewicz families.

The equilibrium state at ``lambda0`` is modelled at finite depth ``n`` on the
backward tree of a base point: leaf ``z`` carries the weight
``exp(-delta_n A_z)`` with ``A_z = log |(f^n)'(z)|`` and ``delta_n`` the root
of ``log sum exp(-t A_z) = 0``.  Spreading each leaf weight uniformly over
its forward orbit gives the (approximately invariant) measure ``nu``.

Moving the tree with the parameter keeps the weights fixed and moves the
points, so

    Ly(lambda) = sum nu * log |f'_lambda(h_lambda(x))|,
    G(lambda)  = delta(lambda) * Ly(lambda),

and ``G`` has an exact minimum at ``lambda0`` in this model (Jensen).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.special import logsumexp

from .errors import (BranchCollision, ContinuationStuck, DegenerateFiber, Disconnected,
                     MassOnCriticalFiber, NewtonDiverged, NoBracket, NotRepelling,
                     ValidationError)
from .family import FamilySpec, MisiurewiczParam, solve_critical_relation
from .motion import PreimageTree, build_preimage_tree, transport_tree
from .poly import Polynomial, periodic_points
from .pressure import aitken, default_base

MASS_TOL = 1e-6
DEFAULT_H = 1e-3
GIBBS_DEPTH = {2: 12, 3: 8}


# -- states -----------------------------------------------------------------

@dataclass
class TreeGibbsState:
    """Finite-depth equilibrium state on a preimage tree.

    ``points``/``weights`` list the nodes of levels ``1..n`` (level order)
    with their share of ``nu``; ``orbit_index[i, j]`` is the position of
    ``f^j`` of leaf ``i`` in ``points``.
    """

    spec: FamilySpec
    param: MisiurewiczParam
    tree: PreimageTree
    depth: int
    delta: float
    leaf_weights: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    orbit_index: np.ndarray
    lyapunov: float
    excluded_mass: float = 0.0

    @property
    def poly(self) -> Polynomial:
        return self.tree.poly

    def node_values(self, tree: PreimageTree) -> np.ndarray:
        return np.concatenate([tree.points[l] for l in range(1, self.depth + 1)])

    def orbit_values(self, psi, m: int):
        """Leaf weights and ``psi`` along the first ``m`` iterates of each leaf."""
        vals = psi(self.points) if callable(psi) else np.asarray(psi)
        return self.leaf_weights, vals[self.orbit_index[:, :m]]


@dataclass
class OrbitEnsemble:
    """Weighted points with a forward map, for Birkhoff sums of callables."""

    points: np.ndarray
    weights: np.ndarray
    step: object

    def orbit_values(self, psi, m: int):
        if not callable(psi):
            raise ValidationError("orbit ensembles need a callable observable")
        z = np.asarray(self.points)
        cols = []
        for _ in range(m):
            cols.append(psi(z))
            z = self.step(z)
        return np.asarray(self.weights), np.column_stack(cols)


def _finite_root(A: np.ndarray) -> float:
    """Root of ``t -> log sum exp(-t A)`` on ``[0, 2]``."""
    F = lambda t: float(logsumexp(-t * A))
    if F(0.0) <= 0 or F(2.0) >= 0:
        raise NoBracket(f"finite-depth pressure has no root in [0, 2] ({F(0.0):.3g}, {F(2.0):.3g})")
    return float(brentq(F, 0.0, 2.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


def _leaf_logs(tree: PreimageTree):
    a = np.abs(tree.derivs[-1])
    keep = a > 0
    return np.where(keep, np.log(np.where(keep, a, 1.0)), 0.0), keep


def gibbs_state(spec: FamilySpec, param: MisiurewiczParam, depth: int | None = None,
                base: complex | None = None) -> TreeGibbsState:
    """Finite-depth equilibrium state for ``-delta log |f'|`` at ``param``."""
    f = param.poly
    depth = GIBBS_DEPTH.get(f.degree, 6) if depth is None else depth
    if depth < 2:
        raise ValidationError("depth must be >= 2")
    base = default_base(f) if base is None else base
    tree = build_preimage_tree(f, base, depth)
    A, keep = _leaf_logs(tree)
    if not keep.any():
        raise DegenerateFiber("every leaf lies on a critical fiber")
    delta = _finite_root(A[keep])
    lw = np.where(keep, -delta * A, -np.inf)
    w = np.exp(lw - logsumexp(lw[keep]))
    D = tree.degree
    offsets = np.cumsum([0] + [D ** l for l in range(1, depth + 1)])
    # leaf i sits at level n; f^j(leaf) is its ancestor at level n - j
    idx = np.arange(D ** depth)
    orbit = np.empty((idx.size, depth), dtype=np.int64)
    for j in range(depth):
        orbit[:, j] = offsets[depth - 1 - j] + idx // D ** j
    nu = np.bincount(orbit.ravel(), weights=np.repeat(w, depth), minlength=offsets[-1]) / depth
    pts = np.concatenate([tree.points[l] for l in range(1, depth + 1)])
    ly = float(np.sum(w[keep] * A[keep])) / depth
    return TreeGibbsState(spec, param, tree, depth, delta, w, pts, nu, orbit, ly, 0.0)


# -- Ly and G ---------------------------------------------------------------

def ly_function(state, f_lam: Polynomial | None = None, motion=None) -> float:
    """``sum nu * log |f'_lambda(h_lambda(x))|`` over the support of ``nu``.

    ``motion`` is None (identity), a callable, or an array aligned with the
    support points.  Points where the integrand is ``-inf`` are excluded and
    their mass must stay below ``1e-6``.
    """
    if isinstance(state, TreeGibbsState):
        pts, w = state.points, state.weights
        f = state.poly if f_lam is None else f_lam
    else:
        pts, w = state.projected, state.weights
        f = state.poly if f_lam is None else f_lam
    if motion is None:
        moved = pts
    elif callable(motion):
        moved = motion(pts)
    else:
        moved = np.asarray(motion)
    d = np.abs(f.deriv(moved))
    bad = d == 0
    lost = float(np.sum(w[bad]))
    if lost > MASS_TOL:
        raise MassOnCriticalFiber(f"excluded mass {lost:.3g} exceeds {MASS_TOL}")
    return float(np.sum(w[~bad] * np.log(d[~bad])))


def g_function(state, delta_lam: float, f_lam: Polynomial | None = None, motion=None) -> float:
    """``G(lambda) = delta(lambda) * Ly(lambda)``."""
    return float(delta_lam) * ly_function(state, f_lam, motion)


def _param_at(spec: FamilySpec, param: MisiurewiczParam, x: np.ndarray) -> MisiurewiczParam:
    """Relation solution with the free coordinates moved by the real vector ``x``."""
    lam = np.asarray(param.lam, dtype=complex).copy()
    free = list(spec.free)
    lam[free] += x[0::2] + 1j * x[1::2]
    try:
        return solve_critical_relation(spec, lam)
    except (NewtonDiverged, NotRepelling) as exc:
        raise ContinuationStuck(f"probe left the certified region: {exc}") from exc


def moved_state(state: TreeGibbsState, param: MisiurewiczParam):
    """Transport the state's tree to ``param``.

    Returns ``(f_lambda, moved support points, delta_n(lambda))``.
    """
    try:
        m = transport_tree(state.spec, state.tree, state.param.lam, param.lam)
    except BranchCollision as exc:
        raise ContinuationStuck(f"motion failed: {exc}") from exc
    A, keep = _leaf_logs(m.tree1)
    delta = _finite_root(A[keep])
    return m.tree1.poly, state.node_values(m.tree1), delta


def G_at(state: TreeGibbsState, x) -> float:
    """``G_lambda0`` at the real offset ``x`` of the free coordinates."""
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        return state.delta * state.lyapunov
    p = _param_at(state.spec, state.param, x)
    f, moved, delta = moved_state(state, p)
    return g_function(state, delta, f, moved)


# -- Hessian ----------------------------------------------------------------

@dataclass
class MetricSample:
    lambda0: np.ndarray
    G_values: dict
    gradient: np.ndarray
    hessian: np.ndarray
    h: float
    eigenvalues: np.ndarray = field(default=None)
    delta0: float = float("nan")
    lyapunov0: float = float("nan")

    @property
    def G0(self) -> float:
        return self.G_values[(0,) * self.gradient.size]

    @property
    def gradient_relative(self) -> float:
        """``|grad G| h / (|H| h^2)``, the first-order change against the
        second-order one over a probe step."""
        hn = float(np.linalg.norm(self.hessian, 2))
        return float(np.linalg.norm(self.gradient)) / (hn * self.h) if hn > 0 else float("inf")

    def to_row(self) -> list:
        lam = np.atleast_1d(self.lambda0)
        return ([v for z in lam for v in (z.real, z.imag)] + list(self.hessian.ravel())
                + list(self.eigenvalues))


def hessian_from_function(G, dim: int, h: float = DEFAULT_H) -> tuple:
    """Central first and second differences of ``G`` at the origin of R^dim.

    Returns ``(gradient, symmetric hessian, values)`` with ``values`` keyed
    by integer stencil offsets.
    """
    if h <= 0:
        raise ValidationError("h must be positive")
    vals = {}

    def g(*off):
        key = tuple(off)
        if key not in vals:
            vals[key] = float(G(np.asarray(off, dtype=float) * h))
        return vals[key]

    e = np.eye(dim, dtype=int)
    zero = (0,) * dim
    g0 = g(*zero)
    grad = np.empty(dim)
    H = np.empty((dim, dim))
    for i in range(dim):
        gp, gm = g(*e[i]), g(*-e[i])
        # fourth-order stencil keeps the truncation error below the
        # stationarity certificate
        grad[i] = (8 * (gp - gm) - (g(*(2 * e[i])) - g(*(-2 * e[i])))) / (12 * h)
        H[i, i] = (gp - 2 * g0 + gm) / h ** 2
        for j in range(i):
            H[i, j] = (g(*(e[i] + e[j])) - g(*(e[i] - e[j])) - g(*(e[j] - e[i]))
                       + g(*(-e[i] - e[j]))) / (4 * h ** 2)
            H[j, i] = H[i, j]
    return grad, H, vals


def hessian_form(spec: FamilySpec, param: MisiurewiczParam, h: float = DEFAULT_H,
                 depth: int | None = None, state: TreeGibbsState | None = None) -> MetricSample:
    """Second derivative of ``G_lambda0`` at ``lambda0`` in real coordinates.

    The free complex coordinates are split into real and imaginary parts.
    Probes that leave the certified region raise :class:`ContinuationStuck`.
    """
    state = gibbs_state(spec, param, depth) if state is None else state
    dim = 2 * len(spec.free)
    grad, H, vals = hessian_from_function(lambda x: G_at(state, x), dim, h)
    ev = np.linalg.eigvalsh(H)
    return MetricSample(np.asarray(param.lam), vals, grad, H, h, ev, state.delta, state.lyapunov)


# -- variance and the pressure form -----------------------------------------

def birkhoff_variance(state, psi, n_list=None) -> dict:
    """``(1/m) int (S_m psi)^2 dnu`` for ``m`` in ``n_list`` and its limit.

    ``psi`` is centered first, and each ``V_m`` averages over every window
    of ``m`` consecutive iterates within the longest recorded orbit.  The limit assumes ``V_m = V + c/m`` and
    eliminates ``c`` from the last two terms (Richardson); Aitken on the
    last three is reported alongside.
    """
    if n_list is None:
        # full orbits on trees (partial windows there are not stationary)
        n_list = [state.depth] if isinstance(state, TreeGibbsState) else [16, 32]
    n_list = sorted(set(int(m) for m in n_list))
    m_max = n_list[-1]
    w, vals = state.orbit_values(psi, m_max)
    w = np.asarray(w, dtype=float)
    w = w / np.sum(w)
    mean = float(np.sum(w * vals.mean(axis=1)).real)
    vals = vals.real - mean
    seq = []
    # every window of length m inside the recorded orbits, so short sums do
    # not all start on the leaves
    csum = np.concatenate([np.zeros((vals.shape[0], 1)), np.cumsum(vals, axis=1)], axis=1)
    for m in n_list:
        S = csum[:, m:] - csum[:, :m_max - m + 1]
        seq.append((m, float(np.sum(w[:, None] * S * S)) / (m * S.shape[1])))
    if len(seq) >= 2:
        (m1, v1), (m2, v2) = seq[-2], seq[-1]
        lim = (m2 * v2 - m1 * v1) / (m2 - m1)
    else:
        lim = seq[-1][1]
    return {"values": seq, "variance": max(float(lim), 0.0), "raw_limit": float(lim),
            "aitken": aitken([v for _, v in seq]), "mean_removed": mean}


@dataclass
class PressureFormSample:
    direction: np.ndarray
    variance: float
    denom: float
    pm_norm_sq: float
    G_norm_sq: float
    ratio: float
    variance_sequence: list = field(default_factory=list)


def _as_real_direction(spec: FamilySpec, v) -> np.ndarray:
    v = np.asarray(v)
    if np.iscomplexobj(v) or v.size == len(spec.free):
        v = np.atleast_1d(v).astype(complex)
        out = np.empty(2 * v.size)
        out[0::2], out[1::2] = v.real, v.imag
        return out
    return v.astype(float)


def pressure_form_norm(spec: FamilySpec, param: MisiurewiczParam, v, h: float = DEFAULT_H,
                       state: TreeGibbsState | None = None, n_list=None) -> PressureFormSample:
    """``Var(phi_dot, nu) / int phi_0 dnu`` along ``gamma(t) = lambda0 + t v``.

    ``phi_t = delta(gamma(t)) log |f'_gamma(t) o h_gamma(t)|`` is
    differentiated centrally along the unit direction and scaled by ``|v|``,
    so the result is exactly quadratic in ``v``.  The directional second
    derivative of ``G`` is computed alongside for the conformal check
    ``|v|_G^2 / int phi_0 = |v|_P^2``.
    """
    x = _as_real_direction(spec, v)
    norm = float(np.linalg.norm(x))
    if norm == 0:
        raise ValidationError("direction must be nonzero")
    u = x / norm
    state = gibbs_state(spec, param) if state is None else state
    phis, Gs = [], []
    for s in (-1, 1):
        p = _param_at(spec, param, s * h * u)
        f, moved, delta = moved_state(state, p)
        phis.append(delta * np.log(np.abs(f.deriv(moved))))
        Gs.append(g_function(state, delta, f, moved))
    G0 = state.delta * state.lyapunov
    phidot = norm * (phis[1] - phis[0]) / (2 * h)
    var = birkhoff_variance(state, phidot, n_list)
    denom = G0
    if denom <= 0:
        raise ValidationError("int phi_0 dnu must be positive")
    gsq = norm ** 2 * (Gs[0] - 2 * G0 + Gs[1]) / h ** 2
    pm = var["variance"] / denom
    ratio = (gsq / denom) / pm if pm > 0 else float("inf")
    return PressureFormSample(x, var["variance"], denom, pm, gsq, ratio, var["values"])


# -- degeneracy probe -------------------------------------------------------

def _cycles(f: Polynomial, max_period: int) -> list:
    """One representative per repelling cycle of exact period ``<= max_period``."""
    out = []
    for p in range(1, max_period + 1):
        seen = []
        for q in periodic_points(f, p):
            z = q.z
            w, exact = z, True
            for j in range(1, p):
                w = f(w)
                if abs(w - z) < 1e-8 * max(1.0, abs(z)):
                    exact = False
                    break
            if not exact or abs(q.multiplier) <= 1 + 1e-6:
                continue
            orbit = [z]
            for _ in range(p - 1):
                orbit.append(f(orbit[-1]))
            if any(min(abs(np.array(orbit) - s)) < 1e-8 * max(1.0, abs(s)) for s in seen):
                continue
            seen.append(z)
            out.append((p, z))
    return out


def _log_multiplier(f: Polynomial, z: complex, p: int) -> float:
    for _ in range(60):
        w, d = f.iterate(np.array([z]), p)
        dz = (w[0] - z) / (d[0] - 1.0)
        z -= dz
        if abs(dz) < 1e-15 * max(1.0, abs(z)):
            break
    _, d = f.iterate(np.array([z]), p)
    return float(np.log(abs(d[0]))), z


def degeneracy_statistics(logm0, logm_minus, logm_plus, h, logm_minus2=None, logm_plus2=None) -> dict:
    """Ratios ``(d/dt log|mult|) / log|mult|`` and their dispersion.

    With the ``2h`` values, the noise is the largest change of any ratio
    between the two step sizes.
    """
    L0 = np.asarray(logm0, dtype=float)
    r = (np.asarray(logm_plus) - np.asarray(logm_minus)) / (2 * h) / L0
    noise = 0.0
    if logm_plus2 is not None:
        r2 = (np.asarray(logm_plus2) - np.asarray(logm_minus2)) / (4 * h) / L0
        noise = float(np.max(np.abs(r - r2)))
    disp = float(np.std(r)) if r.size else 0.0
    return {"ratios": r.tolist(), "K": float(np.mean(r)) if r.size else 0.0,
            "dispersion": disp, "noise": noise,
            "degenerate": bool(disp <= 10 * noise)}


def degeneracy_probe(spec: FamilySpec, param: MisiurewiczParam, direction, max_period: int = 4,
                     h: float = 1e-4) -> dict:
    """Per-cycle log-multiplier ratios along ``lambda0 + t v``.

    A zero direction gives the frozen family.  Only repelling cycles enter
    (the attracting cycle of a free critical point has no Lyapunov weight).
    """
    x = _as_real_direction(spec, direction)
    norm = float(np.linalg.norm(x))
    u = x / norm if norm > 0 else x
    f0 = param.poly
    cyc = _cycles(f0, max_period)
    params = {s: (_param_at(spec, param, s * h * u) if norm > 0 else param) for s in (-2, -1, 1, 2)}
    table = {s: [] for s in (-2, -1, 0, 1, 2)}
    for p, z in cyc:
        L0, _ = _log_multiplier(f0, z, p)
        table[0].append(L0)
        for s in (-2, -1, 1, 2):
            Ls, _ = _log_multiplier(params[s].poly, z, p)
            table[s].append(Ls)
    out = degeneracy_statistics(table[0], table[-1], table[1], h, table[-2], table[2])
    out["periods"] = [p for p, _ in cyc]
    out["cycles"] = len(cyc)
    return out


# -- lengths and distances --------------------------------------------------

def path_length(points, hessians) -> dict:
    """Composite trapezoid of ``sqrt(v^T H v)`` along a sampled polyline.

    ``points`` is ``(m, d)`` real and ``hessians`` is ``(m, d, d)``.  The
    refinement estimate compares with the rule on every other sample.
    """
    X = np.asarray(points, dtype=float)
    H = np.asarray(hessians, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        return {"length": 0.0, "refinement": 0.0}

    def rule(X, H):
        dX = np.diff(X, axis=0)
        a = np.einsum("ij,ijk,ik->i", dX, H[:-1], dX)
        b = np.einsum("ij,ijk,ik->i", dX, H[1:], dX)
        return float(np.sum((np.sqrt(np.maximum(a, 0)) + np.sqrt(np.maximum(b, 0))) / 2))

    L = rule(X, H)
    ref = abs(L - rule(X[::2], H[::2])) if X.shape[0] >= 3 else 0.0
    return {"length": L, "refinement": ref}


@dataclass
class MetricGrid:
    """Hessian field on a rectangular grid of one complex free coordinate."""

    xs: np.ndarray
    ys: np.ndarray
    hessians: np.ndarray
    certified: np.ndarray
    center: np.ndarray = field(default=None)

    @property
    def shape(self):
        return (self.xs.size, self.ys.size)

    def node(self, i: int, j: int) -> np.ndarray:
        return np.array([self.xs[i], self.ys[j]])

    def to_csv_rows(self) -> list:
        rows = []
        for i in range(self.xs.size):
            for j in range(self.ys.size):
                H = self.hessians[i, j]
                ev = np.linalg.eigvalsh(H) if self.certified[i, j] else [np.nan, np.nan]
                rows.append([self.xs[i], self.ys[j], *H.ravel(), *ev])
        return rows


def metric_field(spec: FamilySpec, center: MisiurewiczParam, bounds, shape, h: float = DEFAULT_H,
                 depth: int | None = None) -> MetricGrid:
    """Hessian field on ``bounds = (re0, re1, im0, im1)`` offsets of the free
    coordinate around ``center`` (one complex free coordinate)."""
    if len(spec.free) != 1:
        raise ValidationError("metric grids need exactly one free coordinate")
    nx, ny = shape
    if nx < 1 or ny < 1:
        raise ValidationError("grid needs at least one node per axis")
    xs = np.linspace(bounds[0], bounds[1], nx)
    ys = np.linspace(bounds[2], bounds[3], ny)
    Hs = np.full((nx, ny, 2, 2), np.nan)
    ok = np.zeros((nx, ny), dtype=bool)
    for i in range(nx):
        for j in range(ny):
            try:
                p = _param_at(spec, center, np.array([xs[i], ys[j]]))
                Hs[i, j] = hessian_form(spec, p, h, depth).hessian
                ok[i, j] = True
            except (ContinuationStuck, NoBracket, DegenerateFiber, MassOnCriticalFiber):
                pass
    return MetricGrid(xs, ys, Hs, ok, np.asarray(center.lam))


def _grid_graph(grid: MetricGrid):
    nx, ny = grid.shape
    idx = lambda i, j: i * ny + j
    rows, cols, vals = [], [], []
    for i in range(nx):
        for j in range(ny):
            if not grid.certified[i, j]:
                continue
            for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
                a, b = i + di, j + dj
                if not (0 <= a < nx and 0 <= b < ny) or not grid.certified[a, b]:
                    continue
                d = grid.node(a, b) - grid.node(i, j)
                Hm = (grid.hessians[i, j] + grid.hessians[a, b]) / 2
                wgt = math.sqrt(max(float(d @ Hm @ d), 0.0))
                # zero-length edges would be dropped by the sparse graph
                wgt = max(wgt, np.finfo(float).tiny)
                rows.append(idx(i, j))
                cols.append(idx(a, b))
                vals.append(wgt)
    n = nx * ny
    return coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def wp_distance(grid: MetricGrid, x: tuple, y: tuple) -> dict:
    """Shortest 8-connected grid path between nodes ``x`` and ``y``.

    Edge weights are ``sqrt(d^T H_mid d)`` with ``H_mid`` the mean of the
    endpoint forms.  Returns ``{"distance", "path"}`` with node coordinates.
    """
    nx, ny = grid.shape
    for (i, j) in (x, y):
        if not (0 <= i < nx and 0 <= j < ny):
            raise ValidationError(f"node {(i, j)} is outside the grid")
        if not grid.certified[i, j]:
            raise ValidationError(f"node {(i, j)} is not certified")
    src = x[0] * ny + x[1]
    dst = y[0] * ny + y[1]
    if src == dst:
        return {"distance": 0.0, "path": [grid.node(*x).tolist()]}
    # search from the lower index so both directions sum the same edges in
    # the same order (bitwise symmetric)
    lo, hi = min(src, dst), max(src, dst)
    G = _grid_graph(grid)
    dist, pred = dijkstra(G, directed=False, indices=lo, return_predecessors=True)
    if not np.isfinite(dist[hi]):
        raise Disconnected(f"no certified path from {x} to {y}")
    path = [hi]
    while path[-1] != lo:
        path.append(pred[path[-1]])
    if lo == src:
        path.reverse()
    return {"distance": float(dist[hi]),
            "path": [grid.node(k // ny, k % ny).tolist() for k in path]}


def all_pairs_distances(grid: MetricGrid) -> np.ndarray:
    """Distance matrix over all grid nodes (``inf`` where disconnected).

    Row ``i`` is searched from node ``i``; the upper triangle is mirrored so
    the matrix is exactly symmetric and agrees with :func:`wp_distance`.
    """
    D = dijkstra(_grid_graph(grid), directed=False)
    return np.triu(D) + np.triu(D, 1).T
