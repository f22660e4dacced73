"""Discretized transfer operators on the tower.

Functions on the tower are sampled on a uniform mesh per floor and
interpolated piecewise-linearly, so the operator becomes a sparse matrix:

    (L g)(x) = sum_{T(y) = x} g(y) |R_1(y)|^-t1 |R_2(y)|^-t2 .

Meshes live on the Julia set.  Real Julia sets (intervals) are supported by
the tower path; the circle map ``z^2`` has a single-floor synthetic model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NoConvergence, NotAtBowenParameter, ParamOutOfRange, ValidationError
from .poly import Polynomial
from .tower import MotionContext, TowerModel, fall_preimages, fall_weight

DEFAULT_MESH = 256
EDGE_MARGIN = 1e-6


@dataclass
class CircleModel:
    """Single-floor model of ``z -> z^D`` on the unit circle (no critical
    floor), used as an exactly solvable calibration case."""

    degree: int = 2
    chi_star: float = 1.0
    K_max: int = 1

    @property
    def chi_hat(self) -> float:
        return float(self.degree)


@dataclass
class Mesh:
    """Uniform per-floor meshes; ``floors[k] = (start, step, count)``."""

    floors: dict
    offsets: dict
    size: int
    circle: bool = False

    def points(self, k: int) -> np.ndarray:
        a, h, n = self.floors[k]
        if self.circle:
            return np.exp(1j * (a + h * np.arange(n)))
        return (a + h * np.arange(n)).astype(complex)

    def all_points(self):
        """``(z, k)`` arrays over the whole mesh, floors in order."""
        zs, ks = [], []
        for k in sorted(self.floors):
            z = self.points(k)
            zs.append(z)
            ks.append(np.full(z.size, k))
        return np.concatenate(zs), np.concatenate(ks)

    def stencil(self, k: int, y: np.ndarray):
        """Column indices and weights of the linear interpolant at ``y``."""
        a, h, n = self.floors[k]
        if self.circle:
            u = (np.angle(y) - a) / h % n
            i0 = np.floor(u).astype(np.int64) % n
            w1 = u - np.floor(u)
            i1 = (i0 + 1) % n
        else:
            u = np.clip((y.real - a) / h, 0, n - 1)
            i0 = np.minimum(np.floor(u).astype(np.int64), n - 2)
            w1 = u - i0
            i1 = i0 + 1
        off = self.offsets[k]
        return off + i0, off + i1, 1 - w1, w1


@dataclass
class DiscretizedOperator:
    model: object
    mesh: Mesh
    params: tuple
    matrix: sp.csr_matrix
    kappa: float
    log_weights: list = field(default_factory=list, repr=False)

    @property
    def t1(self):
        return self.params[0]

    @property
    def t2(self):
        return self.params[2]


@dataclass
class EigenData:
    eta: float
    right_fn: np.ndarray
    left_fn: np.ndarray
    gap: float
    power_iters: int
    drift: float = 0.0
    op: DiscretizedOperator = field(default=None, repr=False)


@dataclass
class EquilibriumState:
    weights: np.ndarray
    points: np.ndarray
    floors: np.ndarray
    projected: np.ndarray
    lyapunov: float
    poly: Polynomial = field(default=None, repr=False)

    def total_mass(self) -> float:
        return float(np.sum(self.weights))


def build_mesh(model, density: int = DEFAULT_MESH) -> Mesh:
    if density < 4:
        raise ValidationError("mesh density must be >= 4")
    if isinstance(model, CircleModel):
        h = 2 * np.pi / density
        return Mesh({1: (0.0, h, density)}, {1: 0}, density, circle=True)
    if model.real_interval is None:
        raise ValidationError("tower meshes are implemented for real Julia sets")
    floors, offsets = {}, {}
    a, b = model.real_interval
    pad = EDGE_MARGIN * (b - a) / 2
    a, b = a + pad, b - pad
    floors[1] = (a, (b - a) / (density - 1), density)
    for k in range(2, model.K_max + 1):
        lo, hi = model.U_intervals[k]
        pad = EDGE_MARGIN * (hi - lo) / 2
        lo, hi = lo + pad, hi - pad
        floors[k] = (lo, (hi - lo) / (density - 1), density)
    n = 0
    for k in sorted(floors):
        offsets[k] = n
        n += floors[k][2]
    return Mesh(floors, offsets, n)


def _log_R(model, z, k, ctx):
    return np.log(fall_weight(model, z, k, ctx))


def assemble_operator(model, t1: float, t2: float = 0.0, ctx1: MotionContext | None = None,
                      ctx2: MotionContext | None = None, mesh_density: int = DEFAULT_MESH,
                      kappa: float = 0.5, lambdas: tuple = (None, None)) -> DiscretizedOperator:
    """Sparse matrix of the transfer operator on a per-floor mesh.

    ``ctx1``/``ctx2`` give the polynomial and motion at the two parameters
    (None is the base parameter).  Log-weights are ``-t1*A1 + (-t2*A2)``
    so that equal contexts collapse to the one-parameter weights.
    """
    if t1 + t2 <= 0:
        raise ParamOutOfRange("transfer operator needs t1 + t2 > 0")
    if not 0 < kappa <= 1:
        raise ValidationError("kappa must lie in (0, 1]")
    mesh = build_mesh(model, mesh_density)
    rows, cols, vals = [], [], []
    logs = []

    def add(row_idx, k, y, lw):
        c0, c1, w0, w1 = mesh.stencil(k, y)
        wt = np.exp(lw)
        rows.extend([row_idx, row_idx])
        cols.extend([c0, c1])
        vals.extend([wt * w0, wt * w1])
        logs.append(lw)

    if isinstance(model, CircleModel):
        x = mesh.points(1)
        D = model.degree
        for j in range(D):
            y = np.exp(1j * (np.angle(x) + 2 * np.pi * j) / D)
            A = np.full(x.size, math.log(D))
            add(np.arange(x.size), 1, y, -t1 * A + (-t2 * A))
    else:
        x1 = mesh.points(1)
        for k in range(1, model.K_max + 1):
            y, own = fall_preimages(model, x1, k, real_only=True)
            if y.size == 0:
                continue
            y = y.real.astype(complex)
            with np.errstate(divide="ignore"):
                a1 = _log_R(model, y, k, ctx1)
                a2 = a1 if ctx2 is ctx1 else _log_R(model, y, k, ctx2)
            # nodes on the critical fiber carry no finite weight
            keep = np.isfinite(a1) & np.isfinite(a2)
            y, own, a1, a2 = y[keep], own[keep], a1[keep], a2[keep]
            add(mesh.offsets[1] + own, k, y, -t1 * a1 + (-t2 * a2))
        lc = math.log(model.chi_star)
        for k in range(2, model.K_max + 1):
            x = mesh.points(k)
            idx = mesh.offsets[k] + np.arange(x.size)
            A = np.full(x.size, lc)
            add(idx, k - 1, x, -t1 * A + (-t2 * A))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.size, mesh.size)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    if not np.all(np.isfinite(mat.data)) or np.any(mat.data < 0):
        raise NoConvergence("non-finite or negative operator weights")
    params = (t1, lambdas[0], t2, lambdas[1])
    return DiscretizedOperator(model, mesh, params, mat, kappa, logs)


def _power(matvec, v, tol, max_iter):
    eta_old = None
    drift = np.inf
    for it in range(1, max_iter + 1):
        w = matvec(v)
        eta = float(np.max(np.abs(w)))
        if eta == 0:
            raise NoConvergence("operator annihilates the iterate")
        v = w / eta
        if eta_old is not None:
            drift = abs(eta - eta_old) / eta
            if drift <= tol:
                return eta, v, it, drift
        eta_old = eta
    raise NoConvergence(f"power iteration did not converge (drift {drift:.3g})")


def leading_eigendata(op: DiscretizedOperator, tol: float = 1e-12, max_iter: int = 20000,
                      gap_iters: int = 400) -> EigenData:
    """Leading eigenvalue and eigenvectors by power iteration from 1.

    The gap ``|second eigenvalue| / eta`` comes from power iteration on the
    deflated operator ``L - eta h l^T / (l h)``, averaging its growth rate
    over the second half of the run.
    """
    L = op.matrix
    n = L.shape[0]
    eta, h, it, drift = _power(L.dot, np.ones(n), tol, max_iter)
    LT = L.T.tocsr()
    eta_l, ell, _, _ = _power(LT.dot, np.ones(n), tol, max_iter)
    h = np.maximum(h, 0.0)
    ell = np.maximum(ell, 0.0)
    norm = float(ell @ h)
    if norm <= 0:
        raise NoConvergence("left and right eigenvectors are orthogonal")
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(n)

    def deflated(u):
        return L.dot(u) - eta * h * (ell @ u) / norm

    v -= h * (ell @ v) / norm
    v /= np.linalg.norm(v)
    logs = []
    for _ in range(gap_iters):
        w = deflated(v)
        nw = float(np.linalg.norm(w))
        if nw == 0:
            logs.append(-np.inf)
            break
        logs.append(math.log(nw))
        v = w / nw
    tail = np.array(logs[len(logs) // 2:])
    rate = math.exp(float(np.mean(tail))) if tail.size and np.all(np.isfinite(tail)) else 0.0
    return EigenData(eta, h, ell / norm, rate / eta, it, drift, op)


def pressure_from_eta(ed: EigenData) -> float:
    if ed.eta <= 0:
        raise ValidationError("eta must be positive")
    return math.log(ed.eta)


def check_gap_condition(chi_hat: float, t1: float, t2: float, P_est: float) -> bool:
    """Whether ``exp(P) > chi_hat^(-(t1 + t2)/2)``."""
    return bool(math.exp(P_est) > chi_hat ** (-(t1 + t2) / 2))


def projection(model, z, k):
    """``pi(z, k) = f^(k-1)(z)``, the semiconjugacy from the tower to the plane."""
    if isinstance(model, CircleModel):
        return np.asarray(z)
    out = np.asarray(z, dtype=complex).copy()
    for j in np.unique(k):
        sel = k == j
        w, _ = model.poly.iterate(out[sel], int(j) - 1)
        out[sel] = w
    return out


def equilibrium_state(ed: EigenData, tol: float = 5e-2) -> EquilibriumState:
    """Normalized ``l * h`` on the mesh and its projection to the plane."""
    if abs(ed.eta - 1) > tol:
        raise NotAtBowenParameter(f"eta = {ed.eta:.6g} is not within {tol} of 1")
    op = ed.op
    w = ed.left_fn * ed.right_fn
    w = np.maximum(w, 0.0)
    w = w / np.sum(w)
    z, k = op.mesh.all_points()
    model = op.model
    if isinstance(model, CircleModel):
        proj = z
        f = Polynomial((0.0,) * model.degree + (1.0,))
    else:
        proj = projection(model, z, k)
        f = model.poly
    with np.errstate(divide="ignore"):
        lg = np.log(np.abs(f.deriv(proj)))
    ok = np.isfinite(lg)
    lyap = float(np.sum(w[ok] * lg[ok]))
    return EquilibriumState(w, z, k, proj, lyap, f)


def invariance_defects(ed: EigenData, state: EquilibriumState, cells: list) -> list:
    """``|nu(T^-1 A) - nu(A)|`` for cells ``A = (k, lo, hi)`` (real floors)."""
    from .tower import TowerPoint, tower_map
    model = ed.op.model
    z, k = state.points, state.floors
    tz = np.empty_like(z)
    tk = np.empty_like(k)
    for i in range(z.size):
        if isinstance(model, CircleModel):
            tz[i], tk[i] = z[i] ** model.degree, 1
            continue
        kk = int(k[i])
        if kk == model.K_max and model.in_U(np.array([z[i]]), kk + 1)[0]:
            w, _ = model.poly.iterate(np.array([z[i]]), kk)
            tz[i], tk[i] = w[0], 1
            continue
        p = tower_map(model, TowerPoint(complex(z[i]), kk))
        tz[i], tk[i] = p.z, p.k
    out = []
    for (fk, lo, hi) in cells:
        inA = (k == fk) & (z.real >= lo) & (z.real < hi)
        inB = (tk == fk) & (tz.real >= lo) & (tz.real < hi)
        out.append(float(abs(np.sum(state.weights[inB]) - np.sum(state.weights[inA]))))
    return out


# -- Lasota-Yorke diagnostics -----------------------------------------------

def holder_seminorm(op: DiscretizedOperator, g: np.ndarray, kappa: float | None = None):
    """``sup |g(a) - g(b)| / d(a, b)^kappa`` over same-floor mesh pairs.

    ``g`` may be a mesh function or a ``(mesh, m)`` stack of them; the
    distance on floor ``k`` is the dilated ``chi_*^(k-1) |a - b|``.
    """
    kappa = op.kappa if kappa is None else kappa
    mesh = op.mesh
    G = np.asarray(g, dtype=float)
    single = G.ndim == 1
    if single:
        G = G[:, None]
    chi_star = getattr(op.model, "chi_star", 1.0)
    best = np.zeros(G.shape[1])
    for k in sorted(mesh.floors):
        z = mesh.points(k)
        gv = G[mesh.offsets[k]: mesh.offsets[k] + z.size]
        dist = np.abs(z[:, None] - z[None, :]) * chi_star ** (k - 1)
        np.fill_diagonal(dist, np.inf)
        dk = dist[:, :, None] ** kappa
        dg = np.abs(gv[:, None, :] - gv[None, :, :])
        best = np.maximum(best, np.max(dg / dk, axis=(0, 1)))
    return float(best[0]) if single else best


def random_probes(op: DiscretizedOperator, count: int, seed: int = 0) -> np.ndarray:
    """``(mesh, count)`` random mesh functions with unit Hoelder seminorm:
    a random level plus three random Fourier modes per floor."""
    rng = np.random.default_rng(seed)
    mesh = op.mesh
    G = np.empty((mesh.size, count))
    for j in range(count):
        for k in sorted(mesh.floors):
            n = mesh.floors[k][2]
            u = np.arange(n) / max(n - 1, 1)
            val = np.full(n, rng.standard_normal())
            for m in rng.integers(1, 16, size=3):
                val = val + rng.standard_normal() * np.cos(2 * np.pi * m * u + rng.uniform(0, 2 * np.pi))
            G[mesh.offsets[k]: mesh.offsets[k] + n, j] = val
    return G / holder_seminorm(op, G)


def lasota_yorke_diagnostic(op: DiscretizedOperator, n_list=(1, 2, 4, 8), probe_count: int = 64,
                            ed: EigenData | None = None, seed: int = 0, probes=None) -> dict:
    """Fit ``||L^n g||' <= c_n eta^n ||g||' + C_n ||L^n |g|||_inf`` over probes.

    ``c_n`` is the seminorm contraction on probes with their component along
    the leading eigenfunction removed (``g - l(g) h``), which is where the
    first term of the inequality lives.  ``C_n`` is then the least constant
    for which every raw probe satisfies the inequality with that ``c_n``.
    The decay rate ``(c_max / c_min)^(1 / (n_max - n_min))`` is returned for
    comparison with the deflated gap.
    """
    if ed is None:
        ed = leading_eigendata(op)
    eta = ed.eta
    G = random_probes(op, probe_count, seed) if probes is None else np.asarray(probes, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    H = G - np.outer(ed.right_fn, ed.left_fn @ G)
    S = holder_seminorm(op, G)
    SH = holder_seminorm(op, H)
    L = op.matrix
    ns = sorted(set(int(n) for n in n_list))
    gn, ga, hn = G.copy(), np.abs(G), H.copy()
    rows = []
    for n in range(1, ns[-1] + 1):
        gn, ga, hn = L @ gn, L @ ga, L @ hn
        if n not in ns:
            continue
        en = eta ** n
        A = holder_seminorm(op, gn)
        B = np.max(np.abs(ga), axis=0)
        live = SH > 0
        c_n = float(np.max(holder_seminorm(op, hn)[live] / (en * SH[live]))) if live.any() else 0.0
        slack = A - c_n * en * S
        C_n = float(np.max(np.where(B > 0, np.maximum(slack, 0) / np.where(B > 0, B, 1), 0.0)))
        rows.append({"n": n, "c_n": c_n, "C": C_n})
    cs = [r["c_n"] for r in rows]
    rate = None
    if len(rows) >= 2 and cs[0] > 0 and cs[-1] > 0:
        rate = float((cs[-1] / cs[0]) ** (1.0 / (rows[-1]["n"] - rows[0]["n"])))
    return {"table": rows, "decreasing": bool(all(b < a for a, b in zip(cs, cs[1:]))),
            "eta": eta, "decay_rate": rate, "gap": ed.gap}
