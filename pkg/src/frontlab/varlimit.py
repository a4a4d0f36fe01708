"""Large-amplitude limit of ``c*/M`` as a constrained Rayleigh quotient.

The quantity is

    max  int (q.e) w^2 / int w^2
    over first integrals w (q.grad w = 0) with int zeta w^2 >= int grad w.A grad w.

Writing ``Q``, ``W``, ``B`` for the quadratic forms of the numerator, the
denominator and ``zeta w^2 - grad w.A grad w``, the maximum equals
``min_{mu >= 0} lambda_max(Q + mu B, W)``: the joint range of two real
quadratic forms on a sphere is convex, so the usual S-procedure duality has no
gap.  ``lambda_max`` is convex in ``mu`` with slope ``x.Bx / x.Wx`` at its top
eigenvector ``x``, so ``mu`` is found by bisection on the sign of that slope.
Every top eigenvector with ``x.Bx >= 0`` is a feasible point (lower bound) and
every ``lambda_max(mu)`` is an upper bound; the pair brackets the optimum.

Kernels are represented by groups of grid points on which ``w`` is constant,
which covers grid-aligned flows exactly.  Other flows fall back to a projector
and a matrix-free eigen solve with several seeded starts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .cell import (EXTERIOR, V1, V2, DiffusionSpec, PeriodicCell, ScalarField, VectorField,
                   sphere_area, write_field_csv)
from .discrete import _shift, diffusion_matrix
from .h1dim import AxisymGrid

log = logging.getLogger(__name__)

DENSE_LIMIT = 1500
ALIGN_TOL = 1e-12
# zeta, the mollifier and the auxiliary measure of the ergodicity argument have
# no computational role beyond zeta's appearance in the energy constraint
UNUSED_SYMBOLS = ("rho", "rho_n", "f(t)")


@dataclass
class FirstIntegralResult:
    w: Optional[ScalarField]
    ratio: float
    slack: float
    residual: float
    feasible: bool
    upper_bound: float = math.nan
    lambda_hat: Optional[float] = None
    mu_hat: Optional[float] = None
    flux_V1: Optional[float] = None
    transition_energy: Optional[float] = None
    resolution: tuple = ()
    method: str = ""
    extra: dict = field(default_factory=dict)
    w_values: Optional[np.ndarray] = field(default=None, repr=False)

    def to_record(self) -> dict:
        rec = {
            "ratio": self.ratio, "slack": self.slack, "residual": self.residual,
            "lambda_hat": self.lambda_hat, "mu_hat": self.mu_hat, "flux_V1": self.flux_V1,
            "resolution": list(self.resolution), "feasible": self.feasible,
            "upper_bound": self.upper_bound, "transition_energy": self.transition_energy,
            "method": self.method,
        }
        rec.update(self.extra)
        return json.loads(json.dumps(rec, default=float))


# ---------------------------------------------------------------- kernels

def advection_matrix(q: VectorField) -> sp.csr_matrix:
    """Upwind discretisation of ``w -> q.grad w``.

    The central stencil couples ``p - e_j`` with ``p + e_j`` only and so admits
    spurious odd/even first integrals; the one-sided stencil does not.
    """
    cell = q.cell
    I = sp.identity(cell.size, format="csr")
    D = sp.csr_matrix((cell.size, cell.size))
    for j in range(cell.N):
        b = q.values[j].reshape(-1)
        if not np.any(b):
            continue
        h = cell.spacing[j]
        D = D + (sp.diags(np.maximum(b, 0)) @ (_shift(cell, j, 1) - I)
                 + sp.diags(np.minimum(b, 0)) @ (I - _shift(cell, j, -1))) / h
    return D.tocsr()


def aligned_groups(q: VectorField, tol: float = ALIGN_TOL):
    """Group labels of the exact upwind kernel for a grid-aligned flow, or
    ``None`` if some point carries two nonzero components."""
    cell = q.cell
    thr = tol * max(q.max_norm(), 1e-300)
    active = np.abs(q.values) > thr
    if np.any(active.sum(axis=0) > 1):
        return None
    idx = np.arange(cell.size).reshape(cell.shape)
    rows, cols = [], []
    for j in range(cell.N):
        for sgn in (1, -1):
            mask = (sgn * q.values[j] > thr)
            if np.any(mask):
                nb = np.roll(idx, -sgn, axis=j)
                rows.append(idx[mask]); cols.append(nb[mask])
    if rows:
        r = np.concatenate(rows); c = np.concatenate(cols)
        G = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(cell.size, cell.size))
    else:
        G = sp.coo_matrix((cell.size, cell.size))
    _, labels = connected_components(G, directed=False)
    return labels


def group_matrix(groups: np.ndarray, mass: np.ndarray) -> sp.csr_matrix:
    """``S`` with ``S[k, p] = 1/sqrt(M_k)`` for ``p`` in group ``k``, where
    ``M_k`` is the group's mass; ``S.T`` maps group coordinates to a field and
    is orthonormal for the mass inner product."""
    groups = np.asarray(groups).reshape(-1)
    _, g = np.unique(groups, return_inverse=True)
    m = int(g.max()) + 1
    M = np.bincount(g, weights=mass, minlength=m)
    n = groups.size
    return sp.csr_matrix((1.0 / np.sqrt(M[g]), (g, np.arange(n))), shape=(m, n))


class KernelProjector:
    """Idempotent map onto discrete first integrals.

    ``basis`` (sparse, Euclidean-orthonormal columns) is present for the
    ``identity``, ``graph`` and ``dense`` methods; ``lsqr`` projects
    ``w -> w - D^+ D w`` with a least-squares solve.
    """

    def __init__(self, cell: PeriodicCell, method: str, basis=None, matrix=None,
                 groups=None, tol: float = 1e-10):
        self.cell = cell
        self.method = method
        self.basis = basis
        self.matrix = matrix
        self.groups = groups
        self.tol = tol
        self.residual = 0.0
        self.attained = True

    def apply(self, w):
        arr = w.values if isinstance(w, ScalarField) else np.asarray(w, float)
        x = arr.reshape(-1)
        if self.basis is not None:
            y = self.basis @ (self.basis.T @ x)
        else:
            sol = spla.lsqr(self.matrix, self.matrix @ x, atol=1e-14, btol=1e-14,
                            iter_lim=20 * self.cell.size)[0]
            y = x - sol
        y = y.reshape(arr.shape)
        return ScalarField(self.cell, y) if isinstance(w, ScalarField) else y

    __call__ = apply


def kernel_projector(q: Optional[VectorField], tol: float = 1e-10, method: str = "auto",
                     cell: Optional[PeriodicCell] = None, seed: int = 0) -> KernelProjector:
    """Projector onto ``{w : q.grad w = 0}`` for the upwind advective derivative.

    ``method``: ``graph`` (grid-aligned flows, exact), ``dense`` (null space by
    SVD, small grids), ``lsqr`` (large general flows) or ``auto``.
    """
    cell = q.cell if q is not None else cell
    if cell is None:
        raise ValueError("need a flow or a cell")
    n = cell.size
    if q is None or not np.any(q.values):
        P = KernelProjector(cell, "identity", sp.identity(n, format="csr"),
                            groups=np.arange(n), tol=tol)
        return P
    D = advection_matrix(q)
    if method == "auto":
        groups = aligned_groups(q)
        method = "graph" if groups is not None else ("dense" if n <= 4096 else "lsqr")
    if method == "graph":
        groups = aligned_groups(q)
        if groups is None:
            raise ValueError("graph kernel needs a grid-aligned flow")
        S = group_matrix(groups, np.ones(n))
        P = KernelProjector(cell, "graph", S.T.tocsr(), D, groups, tol)
    elif method == "dense":
        Z = sla.null_space(D.toarray(), rcond=1e-10)
        P = KernelProjector(cell, "dense", sp.csr_matrix(Z), D, None, tol)
    elif method == "lsqr":
        P = KernelProjector(cell, "lsqr", None, D, None, tol)
    else:
        raise ValueError(f"unknown kernel method {method!r}")
    rng = np.random.default_rng(seed)
    res = 0.0
    for _ in range(3):
        w = rng.standard_normal(n)
        res = max(res, float(np.abs(D @ P.apply(w)).max()) / max(q.max_norm(), 1e-300))
    P.residual = res
    P.attained = res <= tol
    if not P.attained:
        log.warning("kernel projector residual %.3e above tolerance %.1e", res, tol)
    return P


# ---------------------------------------------------------------- dual solver

@dataclass
class _DualSolution:
    x: np.ndarray
    lower: float
    upper: float
    mu: float
    iterations: int


def _top_dense(M):
    vals, vecs = sla.eigh(M.toarray() if sp.issparse(M) else M,
                          subset_by_index=[M.shape[0] - 1, M.shape[0] - 1])
    return float(vals[0]), vecs[:, 0]


class _GroupedEig:
    """Top eigenpair of ``Qd + mu B`` with ``Qd`` diagonal, ``B = diag(z) - K``,
    ``K`` positive semidefinite."""

    def __init__(self, qd: np.ndarray, B: sp.csr_matrix, zmax: float):
        self.qd = qd
        self.B = B.tocsr()
        self.zmax = zmax
        self.v0 = None

    def __call__(self, mu: float):
        M = (sp.diags(self.qd) + mu * self.B).tocsc()
        m = M.shape[0]
        if m <= DENSE_LIMIT:
            return _top_dense(M)
        bound = float(self.qd.max()) + mu * self.zmax
        sigma = bound + 1e-6 * max(1.0, abs(bound))
        vals, vecs = spla.eigsh(M, k=1, sigma=sigma, which="LM", v0=self.v0, tol=1e-13)
        self.v0 = vecs[:, 0]
        return float(vals[0]), vecs[:, 0]


def _best_in_span(Qf, Bf, xs):
    """Exact maximiser of ``a.Qa / a.a`` subject to ``a.Ba >= 0`` on span(xs)."""
    U, _ = np.linalg.qr(np.column_stack(xs))
    Q2 = U.T @ Qf(U)
    B2 = U.T @ Bf(U)
    Q2 = 0.5 * (Q2 + Q2.T); B2 = 0.5 * (B2 + B2.T)
    cands = []
    _, vecs = np.linalg.eigh(Q2)
    cands.extend(vecs.T)
    if U.shape[1] == 2:
        b11, b12, b22 = B2[0, 0], B2[0, 1], B2[1, 1]
        # b22 t^2 + 2 b12 t + b11 = 0 with a = (1, t), plus a = (0, 1)
        roots = np.roots([b22, 2 * b12, b11]) if abs(b22) > 0 else (
            [-b11 / (2 * b12)] if b12 else [])
        for t in np.atleast_1d(roots):
            if np.isreal(t):
                a = np.array([1.0, float(np.real(t))])
                cands.append(a / np.linalg.norm(a))
        cands.append(np.array([0.0, 1.0]))
    best = None
    for a in cands:
        if a @ B2 @ a >= -1e-14 * max(1.0, np.abs(B2).max()):
            r = float(a @ Q2 @ a)
            if best is None or r > best[0]:
                best = (r, U @ a)
    return best


def dual_maximize(eig, Qf, Bf, tol: float = 1e-10, max_iter: int = 200) -> _DualSolution:
    """Bisection on the dual variable.  ``eig(mu) -> (lambda_max, unit x)``;
    ``Qf``, ``Bf`` apply the forms to (blocks of) vectors."""
    g, x = eig(0.0)
    d = float(x @ Bf(x))
    if d >= 0:
        return _DualSolution(x, g, g, 0.0, 0)
    lo, x_lo = 0.0, x
    hi = 1.0
    for _ in range(200):
        g_hi, x_hi = eig(hi)
        if float(x_hi @ Bf(x_hi)) >= 0:
            break
        lo, x_lo = hi, x_hi
        hi *= 2.0
    else:
        raise RuntimeError("no feasible direction found; the constant should be feasible")
    upper = g_hi
    lower, best = float(x_hi @ Qf(x_hi)), x_hi
    it = 0
    for it in range(1, max_iter + 1):
        if upper - lower <= tol * max(1.0, abs(upper)):
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        g, x = eig(mid)
        upper = min(upper, g)
        if float(x @ Bf(x)) >= 0:
            hi, x_hi = mid, x
        else:
            lo, x_lo = mid, x
        span = _best_in_span(Qf, Bf, [x_lo, x_hi])
        if span is not None and span[0] > lower:
            lower, best = span
    return _DualSolution(best, lower, upper, hi, it)


# ---------------------------------------------------------------- grid results

def _energy_form(cell: PeriodicCell, A: DiffusionSpec) -> sp.csr_matrix:
    """``K`` with ``w.K w ~ int grad w.A grad w``."""
    return (-cell.dV * diffusion_matrix(cell, A)).tocsr()


def _grid_result(q, zeta, A, e, w, method, upper=math.nan, extra=None) -> FirstIntegralResult:
    cell = zeta.cell
    w = np.asarray(w, float).reshape(cell.shape)
    rms = math.sqrt(cell.integrate(w**2) / cell.volume)
    if rms > 0:
        w = w / rms
    if cell.integrate(w) < 0:
        w = -w
    qe = _qe(q, e, cell)
    num = cell.integrate(qe * w**2)
    den = cell.integrate(w**2)
    K = _energy_form(cell, A)
    energy = float(w.reshape(-1) @ (K @ w.reshape(-1)))
    slack = cell.integrate(zeta.values * w**2) - energy
    if q is not None:
        resid = float(np.abs(advection_matrix(q) @ w.reshape(-1)).max())
        grad = max(float(np.abs(g).max()) for g in cell.gradient(w))
        fi_tol = 1e-6 * q.max_norm() * max(grad, 1e-300)
    else:
        resid, fi_tol = 0.0, 1.0
    eps_slack = 1e-8 * max(1.0, float(zeta.values.max()), A.alpha2) * cell.volume
    feasible = slack >= -eps_slack and resid <= fi_tol
    return FirstIntegralResult(ScalarField(cell, w, "w"), num / den, slack, resid, feasible,
                               upper, resolution=tuple(cell.resolution), method=method,
                               extra=extra or {})


def _qe(q, e, cell):
    if q is None:
        return np.zeros(cell.shape)
    return np.einsum("i...,i->...", q.values, np.asarray(e, float))


def _solve_groups(groups, cell, qe, zeta_vals, K, tol):
    """Dual solve over fields constant on each group of a periodic grid."""
    mass = np.full(cell.size, cell.dV)
    S = group_matrix(groups, mass)
    qd = _group_mean(S, mass, qe.reshape(-1))
    B = (S @ (sp.diags(mass * zeta_vals.reshape(-1)) - K) @ S.T).tocsr()
    sol = _solve_reduced(qd, B, float(zeta_vals.max()), tol)
    return (S.T @ sol.x), sol


def _group_mean(S, mass, values):
    """Diagonal of ``S diag(mass values) S^T``: mass-weighted group means."""
    return np.asarray((S.multiply(S)) @ (mass * values)).ravel()


def _solve_reduced(qd, B, zmax, tol):
    eig = _GroupedEig(qd, B, zmax)
    Qf = lambda x: qd[:, None] * x if x.ndim == 2 else qd * x
    Bf = lambda x: B @ x
    return dual_maximize(eig, Qf, Bf, tol)


def maximize_ratio(q: Optional[VectorField], zeta: ScalarField, A: DiffusionSpec, e,
                   P: Optional[KernelProjector] = None, tol: float = 1e-10, starts: int = 4,
                   seed: int = 0) -> FirstIntegralResult:
    """Best feasible first integral for the constrained ratio.

    With a group basis (identity or graph kernel) the dual problem is solved on
    the group coordinates; otherwise the ``ascent`` engine runs the same dual
    iteration with matrix-free eigen solves on ``P (Q + mu B) P`` from
    ``starts`` seeded random vectors and keeps the best.
    """
    cell = zeta.cell
    e = np.asarray(e, float)
    if P is None:
        P = kernel_projector(q, cell=cell)
    qe = _qe(q, e, cell)
    if not np.any(qe):
        return _grid_result(q, zeta, A, e, np.ones(cell.shape), "constant", 0.0)
    K = _energy_form(cell, A)
    if P.groups is not None:
        w, sol = _solve_groups(P.groups, cell, qe, zeta.values, K, tol)
    elif P.basis is not None:
        Z = P.basis.toarray()
        qd = Z.T @ (qe.reshape(-1)[:, None] * Z)
        B = Z.T @ (zeta.values.reshape(-1)[:, None] * Z - (K @ Z) / cell.dV)
        eig = lambda mu: _top_dense(qd + mu * B)
        sol = dual_maximize(eig, lambda x: qd @ x, lambda x: B @ x, tol)
        w = Z @ sol.x
    else:
        return _ascent(q, zeta, A, e, P, qe, K, tol, starts, seed)
    return _grid_result(q, zeta, A, e, w, f"dual/{P.method}", sol.upper,
                        {"mu": sol.mu, "bisections": sol.iterations})


def _ascent(q, zeta, A, e, P, qe, K, tol, starts, seed):
    cell = zeta.cell
    n = cell.size
    dV = cell.dV
    Qd = dV * qe.reshape(-1)
    Bm = (sp.diags(dV * zeta.values.reshape(-1)) - K).tocsr()
    proj = lambda x: P.apply(x)
    Qf = lambda x: _cols(lambda v: proj(Qd * proj(v)) / dV, x)
    Bf = lambda x: _cols(lambda v: proj(Bm @ proj(v)) / dV, x)
    rng = np.random.default_rng(seed)
    seeds = [proj(rng.standard_normal(n)) for _ in range(starts)]

    def eig(mu):
        op = spla.LinearOperator((n, n), dtype=float,
                                 matvec=lambda v: proj(Qd * proj(v) + mu * (Bm @ proj(v))) / dV)
        best = None
        for v0 in seeds:
            val, vec = spla.eigsh(op, k=1, which="LA", v0=v0, tol=1e-12, maxiter=20 * n)
            if best is None or val[0] > best[0]:
                best = (float(val[0]), vec[:, 0])
        return best

    sol = dual_maximize(eig, Qf, Bf, tol)
    return _grid_result(q, zeta, A, e, proj(sol.x), f"ascent/{P.method}", sol.upper,
                        {"mu": sol.mu, "starts": starts, "seed": seed})


def _cols(f, x):
    if x.ndim == 1:
        return f(x)
    return np.column_stack([f(x[:, k]) for k in range(x.shape[1])])


# ---------------------------------------------------------------- shear flows

def shear_axis(q: VectorField, tol: float = ALIGN_TOL) -> int:
    """Axis ``a`` with ``q = q_a(cross variables) e_a``; raises otherwise."""
    scale = max(q.max_norm(), 1e-300)
    big = [j for j in range(q.N) if np.abs(q.values[j]).max() > tol * scale]
    if not big:
        return 0
    if len(big) > 1:
        raise ValueError("q not shear-shaped: more than one nonzero component")
    a = big[0]
    comp = q.values[a]
    if np.abs(comp - comp.mean(axis=a, keepdims=True)).max() > tol * scale:
        raise ValueError("q not shear-shaped: profile varies along the flow direction")
    return a


def cross_section(cell: PeriodicCell, axis: int) -> PeriodicCell:
    keep = [k for k in range(cell.N) if k != axis]
    return PeriodicCell(tuple(cell.periods[k] for k in keep),
                        tuple(cell.resolution[k] for k in keep))


def _average_coefficients(cell, zeta, A, axis):
    cs = cross_section(cell, axis)
    keep = [k for k in range(cell.N) if k != axis]
    zbar = zeta.values.mean(axis=axis)
    Av = A.values[np.ix_(keep, keep)].mean(axis=2 + axis)
    Abar = DiffusionSpec(cs, Av, A.alpha1, A.alpha2)
    return cs, ScalarField(cs, zbar), Abar


def _lift(cell, axis, w_cross):
    return np.broadcast_to(np.expand_dims(w_cross, axis), cell.shape).copy()


def shear_reduction(q: VectorField, zeta: ScalarField, A: DiffusionSpec, e,
                    tol: float = 1e-10) -> FirstIntegralResult:
    """Constrained maximum for a shear flow, solved on the cross-section.

    Coefficients are averaged along the flow direction, which is exact for
    fields independent of that direction.  The result also records
    ``unconstrained_sup`` (the largest value of ``q.e``, the supremum without
    the energy constraint) and the ratio of the positive-part witness
    ``w = 1 + t max(q.e, 0)``.
    """
    a = shear_axis(q)
    cell = q.cell
    e = np.asarray(e, float)
    qe_full = _qe(q, e, cell)
    if not np.any(qe_full):
        return _grid_result(q, zeta, A, e, np.ones(cell.shape), "constant", 0.0,
                            {"unconstrained_sup": 0.0, "witness_ratio": 0.0, "axis": a})
    cs, zbar, Abar = _average_coefficients(cell, zeta, A, a)
    qe = np.take(qe_full, 0, axis=a)
    K = _energy_form(cs, Abar)
    w_c, sol = _solve_groups(np.arange(cs.size), cs, qe, zbar.values, K, tol)
    w_c = w_c.reshape(cs.shape)
    witness = _positive_part_witness(cs, qe, zbar.values, K)
    if witness[0] > _ratio(cs, qe, w_c):
        w_c = witness[1]
    res = _grid_result(q, zeta, A, e, _lift(cell, a, w_c), "shear/dual", sol.upper,
                       {"unconstrained_sup": float(qe.max()), "witness_ratio": witness[0],
                        "axis": a, "mu": sol.mu})
    return res


def _ratio(cs, qe, w):
    return cs.integrate(qe * w**2) / cs.integrate(w**2)


def _positive_part_witness(cs, qe, zeta_vals, K, n_t: int = 200):
    """Best ``1 + t alpha``, ``alpha = max(q.e, 0)``, over the feasible ``t``."""
    alpha = np.maximum(qe, 0.0)
    one = np.ones(cs.shape)
    if not np.any(alpha):
        return 0.0, one
    z = lambda u, v: cs.integrate(zeta_vals * u * v)
    kk = float(alpha.reshape(-1) @ (K @ alpha.reshape(-1)))
    # slack(t) = z(1,1) + 2t z(1,a) + t^2 (z(a,a) - kk)
    c2, c1, c0 = z(alpha, alpha) - kk, 2 * z(one, alpha), z(one, one)
    if c2 >= 0:
        t_max = 1e6
    else:
        t_max = float((-c1 - math.sqrt(c1 * c1 - 4 * c2 * c0)) / (2 * c2))
    best = (0.0, one)
    for t in np.geomspace(1e-6 * t_max, t_max, n_t):
        w = one + t * alpha
        r = _ratio(cs, qe, w)
        if r > best[0]:
            best = (r, w)
    return best


# ---------------------------------------------------------------- component constancy

def component_constant_limit(q: VectorField, zeta: ScalarField, A: DiffusionSpec, e,
                             tol: float = 1e-10) -> FirstIntegralResult:
    """Constrained maximum over fields constant on ``V1`` and on ``V2``.

    Exterior values are free.  Since ``q`` is axial and the partition does not
    vary along the axis, the problem is solved on the cross-section with
    coefficients averaged along the axis.
    """
    if q.labels is None:
        raise ValueError("partition missing labels")
    labels = np.asarray(q.labels)
    if not (np.any(labels == V1) and np.any(labels == V2)):
        raise ValueError("partition missing labels: need both V1 and V2")
    cell = q.cell
    e = np.asarray(e, float)
    if np.abs(q.values[:, labels == EXTERIOR]).max(initial=0.0) > 0:
        raise ValueError("q must vanish on EXTERIOR points")
    axis = int(q.meta.get("axis", shear_axis(q)))
    lab = np.take(labels, 0, axis=axis)
    if np.any(np.broadcast_to(np.expand_dims(lab, axis), cell.shape) != labels):
        raise ValueError("partition must be invariant along the flow axis")
    cs, zbar, Abar = _average_coefficients(cell, zeta, A, axis)
    qe = np.take(_qe(q, e, cell), 0, axis=axis)
    groups = np.where(lab == V1, -1, np.where(lab == V2, -2, np.arange(cs.size).reshape(cs.shape)))
    K = _energy_form(cs, Abar)
    w_c, sol = _solve_groups(groups.reshape(-1), cs, qe, zbar.values, K, tol)
    w_c = w_c.reshape(cs.shape)
    w_full = _lift(cell, axis, w_c)
    res = _grid_result(q, zeta, A, e, w_full, "components/dual", sol.upper, {"mu": sol.mu})
    w = res.w.values
    lam_hat = float(w[labels == V1].mean())
    mu_hat = float(w[labels == V2].mean())
    phi1 = float(cell.integrate(np.where(labels == V1, _qe(q, e, cell), 0.0)))
    res.lambda_hat, res.mu_hat, res.flux_V1 = lam_hat, mu_hat, phi1
    num = cell.integrate(_qe(q, e, cell) * w**2)
    res.extra["numerator_identity_error"] = abs(num - (lam_hat**2 - mu_hat**2) * phi1)
    res.transition_energy = cell.periods[axis] * _pinned_energy(K, lab.reshape(-1))
    return res


def _pinned_energy(K, lab):
    """Minimal ``u.K u`` with ``u = 1`` on V1 and ``u = 0`` on V2."""
    p1, p2 = lab == V1, lab == V2
    free = ~(p1 | p2)
    u = p1.astype(float)
    u[free] = spla.spsolve(K[free][:, free].tocsc(), -(K[free][:, p1] @ np.ones(int(p1.sum()))))
    return float(u @ (K @ u))


@dataclass
class AxisymmetricCell:
    """Cross-section of two balls of radius ``R`` in ``N - 1`` dimensions, reduced
    around the line through their centres to ``(rho, z)`` with weight
    ``rho^(N-3)`` on a Neumann box ``[0, rho_max] x [0, height]``."""
    N: int
    radius: float
    gap: float
    resolution: int
    rho_max: float = 0.5
    height: float = 1.0

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("axisymmetric cross-sections need N >= 3")
        if self.radius <= 0 or self.gap < 0:
            raise ValueError("need radius > 0 and gap >= 0")
        if 2 * (2 * self.radius) + self.gap > self.height or self.radius > self.rho_max:
            raise ValueError("balls overflow the cross-section box")
        self.grid = AxisymGrid(self.rho_max, 0.0, self.height, 1.0 / self.resolution, self.N - 3)
        if self.grid.nz % 2:
            raise ValueError("need an even number of cells along the axis of the balls")
        mid = self.height / 2.0
        self.centres = (mid + self.radius + self.gap / 2.0, mid - self.radius - self.gap / 2.0)
        self.angular = sphere_area(self.N - 3)
        g = self.grid
        s2 = [(g.R**2 + (g.Z - c) ** 2) / self.radius**2 for c in self.centres]
        self.labels = np.full(g.shape, EXTERIOR, dtype=np.int8)
        self.labels[s2[0] < 1.0] = V1
        self.labels[s2[1] < 1.0] = V2
        self.s2 = s2


def axisymmetric_component_limit(N: int, gap: float, resolution: int, radius: float = 0.2,
                                 zeta: float = 1.0, diffusivity: float = 1.0,
                                 profile: str = "poiseuille", e_axial: float = 1.0,
                                 tol: float = 1e-10, **box) -> FirstIntegralResult:
    """Component-constant limit for ``N``-dimensional two-cylinder flows, using
    the rotationally symmetric cross-section (any ``N >= 3`` at 2D cost).

    Axial length is 1; ``zeta`` and the diffusivity are constants.
    """
    ac = AxisymmetricCell(N, radius, gap, resolution, **box)
    g = ac.grid
    mass = ac.angular * g.mass()
    K = (ac.angular * diffusivity * g.stiffness()).tocsr()
    if profile == "poiseuille":
        v1 = np.where(ac.labels == V1, 1.0 - ac.s2[0], 0.0)
        v2 = np.where(ac.labels == V2, 1.0 - ac.s2[1], 0.0)
    else:
        raise ValueError(f"unsupported axisymmetric profile {profile!r}")
    qe = e_axial * (v1 - v2).reshape(-1)
    lab = ac.labels.reshape(-1)
    groups = np.where(lab == V1, -1, np.where(lab == V2, -2, np.arange(g.size)))
    S = group_matrix(groups, mass)
    qd = _group_mean(S, mass, qe)
    B = (S @ (sp.diags(mass * zeta) - K) @ S.T).tocsr()
    sol = _solve_reduced(qd, B, zeta, tol)
    w = S.T @ sol.x
    den = float(mass @ w**2)
    w = w / math.sqrt(den / mass.sum())
    if mass @ w < 0:
        w = -w
    num = float(mass @ (qe * w**2))
    den = float(mass @ w**2)
    slack = float(zeta * den - w @ (K @ w))
    lam_hat, mu_hat = float(w[lab == V1].mean()), float(w[lab == V2].mean())
    phi1 = float(mass @ np.where(lab == V1, qe, 0.0))
    trans = _pinned_energy(K, lab)
    feasible = slack >= -1e-8 * max(1.0, zeta, diffusivity) * mass.sum()
    return FirstIntegralResult(
        None, num / den, slack, 0.0, feasible, sol.upper, lam_hat, mu_hat, phi1, trans,
        (g.nr, g.nz), "axisymmetric/dual",
        {"mu": sol.mu, "N": N, "gap": gap,
         "numerator_identity_error": abs(num - (lam_hat**2 - mu_hat**2) * phi1)},
        w_values=w.reshape(g.shape))


def write_w_csv(path, result: FirstIntegralResult) -> None:
    write_field_csv(path, result.w.cell, {"w": result.w.values})
