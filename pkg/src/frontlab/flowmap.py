"""Streamlines of periodic velocity fields and what they conserve.

Trajectories use the classical four-stage Runge-Kutta method with the step
shrunk to ``T / ceil(T / dt)`` so that the final time is hit exactly.  A
velocity is either a callable on points of shape ``(P, N)`` or a
:class:`VectorField`; a field's continuum ``func`` is used when present,
otherwise grid values are interpolated.  Scalars attached to a trace are
interpolated multilinearly or by their trigonometric interpolant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from .cell import PeriodicCell, ScalarField, VectorField

Velocity = Union[VectorField, Callable]
INTERPOLATIONS = ("linear", "spectral")


# ------------------------------------------------------------ interpolation

def _grid_coords(cell: PeriodicCell, X: np.ndarray) -> np.ndarray:
    return np.stack([X[:, k] / cell.spacing[k] for k in range(cell.N)])


def interpolate_linear(cell: PeriodicCell, values: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation at points ``X`` of shape ``(P, N)``."""
    return ndimage.map_coordinates(values, _grid_coords(cell, X), order=1, mode="grid-wrap")


def interpolate_spectral(cell: PeriodicCell, values: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Trigonometric interpolant of periodic samples evaluated at ``X``."""
    coef = np.fft.fftn(values) / values.size
    out = coef[None, ...]
    for k in range(cell.N):
        n, L = cell.resolution[k], cell.periods[k]
        freq = np.fft.fftfreq(n, d=1.0 / n)
        ph = np.exp(2j * np.pi * np.outer(X[:, k], freq) / L)  # (P, n)
        if k == 0:
            out = np.tensordot(ph, coef, axes=([1], [0]))  # (P, ...)
        else:
            out = np.einsum("pk,pk...->p...", ph, out)
    return out.real


def _scalar_sampler(w, cell: Optional[PeriodicCell], method: str) -> Callable:
    if callable(w) and not isinstance(w, ScalarField):
        return w
    if method not in INTERPOLATIONS:
        raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
    vals = w.values if isinstance(w, ScalarField) else np.asarray(w, float)
    cell = w.cell if isinstance(w, ScalarField) else cell
    f = interpolate_linear if method == "linear" else interpolate_spectral
    return lambda X: f(cell, vals, X)


def velocity_function(q: Velocity, method: str = "auto") -> Callable:
    """Callable ``(P, N) -> (P, N)`` for a field or callable velocity.

    ``auto`` prefers the field's continuum ``func`` and falls back to
    multilinear interpolation of the grid samples.
    """
    if not isinstance(q, VectorField):
        return q
    if method == "auto":
        if q.func is not None:
            return q.func
        method = "linear"
    f = interpolate_linear if method == "linear" else interpolate_spectral
    return lambda X: np.stack([f(q.cell, q.values[k], X) for k in range(q.N)], axis=1)


# ------------------------------------------------------------ integration

def rk4_paths(vel: Callable, X0: np.ndarray, T: float, dt: float,
              sample_every: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``x' = vel(x)`` from every row of ``X0`` over ``[0, T]``.

    Returns sample times and unwrapped positions of shape ``(S, P, N)``.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    X = np.array(X0, dtype=float, ndmin=2)
    steps = max(1, math.ceil(abs(T) / dt - 1e-12)) if T != 0 else 0
    h = T / steps if steps else 0.0
    times, out = [0.0], [X.copy()]
    carry = np.zeros_like(X)  # compensated summation of the increments
    for s in range(1, steps + 1):
        k1 = vel(X)
        k2 = vel(X + 0.5 * h * k1)
        k3 = vel(X + 0.5 * h * k2)
        k4 = vel(X + h * k3)
        inc = (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4) - carry
        Xn = X + inc
        carry = (Xn - X) - inc
        X = Xn
        if s % sample_every == 0 or s == steps:
            times.append(s * h)
            out.append(X.copy())
    return np.array(times), np.stack(out)


@dataclass
class FlowTrace:
    seed: np.ndarray
    dt: float
    times: np.ndarray
    unwrapped: np.ndarray
    wrapped: np.ndarray
    w: Optional[np.ndarray] = field(default=None)

    @property
    def end(self) -> np.ndarray:
        return self.unwrapped[-1]


def integrate_streamline(q: Velocity, x0, T: float, dt: float, w=None,
                         interpolation: str = "auto", w_interpolation: str = "linear",
                         sample_every: int = 1, periods=None) -> FlowTrace:
    """Trajectory of ``x0`` under ``q`` for time ``T`` (negative ``T`` runs
    backwards), optionally sampling a scalar ``w`` along it."""
    vel = velocity_function(q, interpolation)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    times, X = rk4_paths(vel, x0[None, :], T, dt, sample_every)
    X = X[:, 0, :]
    periods = periods if periods is not None else (
        q.cell.periods if isinstance(q, VectorField) else None)
    wrapped = np.mod(X, periods) if periods is not None else X.copy()
    wv = None
    if w is not None:
        cell = q.cell if isinstance(q, VectorField) else None
        wv = _scalar_sampler(w, cell, w_interpolation)(X)
    step = abs(T) / max(1, math.ceil(abs(T) / dt - 1e-12))
    return FlowTrace(x0, step, times, X, wrapped, wv)


def orbit_period(q: Velocity, x0, dt: float, t_max: float, tol: float = 1e-12):
    """First return time of a closed orbit and the distance to ``x0`` there.

    The return is where ``g(t) = (x(t) - x0) . q(x(t))``, the half-derivative
    of the squared distance, changes sign from negative to positive after the
    trajectory has left the seed; that crossing is located by bisection.
    """
    vel = velocity_function(q)
    x0 = np.asarray(x0, float).reshape(1, -1)
    times, X = rk4_paths(vel, x0, t_max, dt)
    X = X[:, 0, :]
    d2 = np.sum((X - x0) ** 2, axis=1)
    g = np.einsum("ij,ij->i", X - x0, vel(X))
    far = 0.25 * d2.max()
    left = np.argmax(d2 > far)
    idx = None
    for i in range(max(left, 1), len(times) - 1):
        if g[i] < 0 <= g[i + 1]:
            idx = i
            break
    if idx is None:
        raise RuntimeError("no return found; increase t_max")
    a, b = times[idx], times[idx + 1]
    a0, xa = a, X[idx]

    def at(t):
        _, Y = rk4_paths(vel, xa[None, :], t - a0, dt / 4)
        y = Y[-1, 0]
        return y, float((y - x0[0]) @ vel(y[None, :])[0])

    while b - a > tol * max(1.0, b):
        m = 0.5 * (a + b)
        if at(m)[1] < 0:
            a = m
        else:
            b = m
    y, _ = at(0.5 * (a + b))
    return 0.5 * (a + b), float(np.linalg.norm(y - x0[0]))


# ------------------------------------------------------------ volume

@dataclass
class VolumeCheck:
    deviation: float
    initial: float
    final: float
    samples: int
    flagged: bool = False


def _polygon_area(P: np.ndarray) -> float:
    P = P - P.mean(axis=0)
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _densify_polygon(V: np.ndarray, n: int) -> np.ndarray:
    V = np.asarray(V, float)
    edges = np.roll(V, -1, axis=0) - V
    lengths = np.linalg.norm(edges, axis=1)
    counts = np.maximum(1, np.round(n * lengths / lengths.sum()).astype(int))
    pts = [V[i] + np.outer(np.arange(c) / c, edges[i]) for i, c in enumerate(counts)]
    return np.vstack(pts)


def _surface(V: np.ndarray, level: int):
    """Outward-oriented triangulated hull of a convex point set, each facet
    split into ``4**level`` triangles."""
    hull = ConvexHull(V)
    c = V.mean(axis=0)
    pts = [p for p in V]
    tris = []
    for simplex in hull.simplices:
        a, b, d = V[simplex]
        if np.dot(np.cross(b - a, d - a), a - c) < 0:
            b, d = d, b
        tris.append((a, b, d))
    for _ in range(level):
        new = []
        for a, b, d in tris:
            ab, bd, da = (a + b) / 2, (b + d) / 2, (d + a) / 2
            new += [(a, ab, da), (ab, b, bd), (da, bd, d), (ab, bd, da)]
        tris = new
    # unique vertices and index triples
    flat = np.array([p for t in tris for p in t])
    uniq, inv = np.unique(np.round(flat, 14), axis=0, return_inverse=True)
    return uniq, inv.reshape(-1, 3)


def _mesh_volume(P: np.ndarray, F: np.ndarray) -> float:
    a, b, d = P[F[:, 0]], P[F[:, 1]], P[F[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, d)).sum() / 6.0)


def _advect_end(vel, P0, t, dt):
    return rk4_paths(vel, P0, t, dt, sample_every=10**9)[1][-1]


def _image_areas(vel, P0, t, dt):
    """Image areas of the polygon through ``P0`` and of the polygon with all
    edge midpoints added."""
    M0 = 0.5 * (P0 + np.roll(P0, -1, axis=0))
    images = _advect_end(vel, np.vstack([P0, M0]), t, dt)
    P1, M1 = images[: len(P0)], images[len(P0):]
    fine = np.empty((2 * len(P0), P0.shape[1]))
    fine[0::2], fine[1::2] = P1, M1
    return abs(_polygon_area(P1)), abs(_polygon_area(fine))


def volume_preservation_check(q: Velocity, region, t: float, dt: float = 1e-3,
                              samples: int = 8000, level: int = 4,
                              boundary=None) -> VolumeCheck:
    """Relative change of the area (2D) or volume (3D) of a convex region
    after advection of its boundary for time ``t``.

    2D: the image polygon's area converges like ``n^-2`` in the number of
    boundary samples, so the areas with ``n`` and ``2n`` samples are combined
    as ``(4 A_2n - A_n) / 3``.  When the two differ by more than 1% the
    sampling is quadrupled once and the result flagged if that still fails.
    ``boundary`` fixes the initial samples, which keeps the polygon error the
    same across runs in time-step studies.

    3D: hull facets are subdivided ``level`` and ``level + 1`` times and the
    two image volumes are extrapolated the same way.  The result is flagged
    when an image edge is stretched more than tenfold or the two volumes
    differ by more than 1%.
    """
    V = np.asarray(region, float)
    vel = velocity_function(q)
    dim = V.shape[1]
    if dim == 2:
        if boundary is None:
            V = V[ConvexHull(V).vertices]  # convex seed in counter-clockwise order
        ok = False
        for attempt in range(2):
            P0 = np.asarray(boundary, float) if boundary is not None else _densify_polygon(V, samples)
            a0 = abs(_polygon_area(P0))
            coarse, fine = _image_areas(vel, P0, t, dt)
            ok = abs(fine - coarse) <= 1e-2 * a0
            if ok or boundary is not None:
                break
            samples *= 4
        # exact polygon: the initial area needs no extrapolation
        a1 = (4.0 * fine - coarse) / 3.0
        return VolumeCheck(abs(a1 - a0) / a0, a0, a1, 2 * len(P0), not ok)
    if dim != 3:
        raise ValueError("regions must be 2D polygons or 3D polytopes")
    # facet interpolation error falls by 4 per subdivision level
    vols = []
    for lev in (level, level + 1):
        P0, F = _surface(V, lev)
        P1 = _advect_end(vel, P0, t, dt)
        vols.append((abs(_mesh_volume(P0, F)), abs(_mesh_volume(P1, F)), P0, P1, F))
    (_, c1, *_), (a0, f1, P0, P1, F) = vols
    edge = lambda X: max(np.linalg.norm(X[F[:, i]] - X[F[:, (i + 1) % 3]], axis=1).max()
                         for i in range(3))
    ok = edge(P1) <= 10.0 * edge(P0) and abs(f1 - c1) <= 1e-2 * a0
    a1 = (4.0 * f1 - c1) / 3.0
    return VolumeCheck(abs(a1 - a0) / a0, a0, a1, len(P0), not ok)


def time_step_study(q: Velocity, region, t: float, dts, samples: int = 2000):
    """Image areas for a sequence of time steps on fixed boundary samples.

    Returns ``(errors, orders)`` where ``errors[i]`` is the area difference to
    the finest step and ``orders`` the observed convergence exponents between
    consecutive coarser steps.
    """
    V = np.asarray(region, float)
    P0 = _densify_polygon(V[ConvexHull(V).vertices], samples)
    vel = velocity_function(q)
    areas = [abs(_polygon_area(_advect_end(vel, P0, t, dt))) for dt in dts]
    err = np.abs(np.array(areas[:-1]) - areas[-1])
    dts = np.asarray(dts[:-1], float)
    orders = np.log(err[:-1] / err[1:]) / np.log(dts[:-1] / dts[1:])
    return err, orders


# ------------------------------------------------------------ first integrals

@dataclass
class DriftReport:
    per_seed: np.ndarray
    max_drift: float
    T: float
    dt: float


def first_integral_conservation(q: Velocity, w, seeds, T: float, dt: float = 1e-3,
                                w_interpolation: str = "linear", sample_every: int = 10,
                                interpolation: str = "auto") -> DriftReport:
    """``max_t |w(x(t)) - w(x(0))|`` per seed over the sample times in ``[0, T]``."""
    vel = velocity_function(q, interpolation)
    cell = q.cell if isinstance(q, VectorField) else None
    sampler = _scalar_sampler(w, cell, w_interpolation)
    seeds = np.array(seeds, dtype=float, ndmin=2)
    _, X = rk4_paths(vel, seeds, T, dt, sample_every)
    S, Pn, N = X.shape
    vals = sampler(X.reshape(-1, N)).reshape(S, Pn)
    drift = np.abs(vals - vals[0]).max(axis=0)
    return DriftReport(drift, float(drift.max()), T, dt)


def stream_function_2d(q: VectorField, tol: float = 1e-10) -> ScalarField:
    """Zero-mean ``phi`` with ``q = (-D_2 phi, D_1 phi)`` for central differences.

    The inversion is done mode by mode: with ``s_j = sin(k_j h_j) / h_j`` the
    symbol of ``D_j``, ``phi_hat = i (s_2 q1_hat - s_1 q2_hat) / (s_1^2 + s_2^2)``
    and modes where both symbols vanish are set to zero.  This is the exact
    inverse of the discrete perpendicular gradient on its range.
    """
    if q.N != 2:
        raise ValueError("stream functions are constructed in two dimensions only")
    cell = q.cell
    means = [cell.average(q.values[k]) for k in range(2)]
    scale = max(q.max_norm(), 1.0)
    if max(abs(m) for m in means) > tol * scale:
        raise ValueError(f"nonzero circulation averages {means}; no periodic stream function")
    if q.max_divergence() > max(q.div_tol, tol) * scale:
        raise ValueError("q is not divergence-free")
    s = []
    for k in range(2):
        n, h = cell.resolution[k], cell.spacing[k]
        kk = 2 * np.pi * np.fft.fftfreq(n, d=h)
        s.append(np.sin(kk * h) / h)
    S1, S2 = np.meshgrid(s[0], s[1], indexing="ij")
    den = S1**2 + S2**2
    q1, q2 = np.fft.fft2(q.values[0]), np.fft.fft2(q.values[1])
    small = den < 1e-12 * den.max() if den.max() > 0 else np.ones_like(den, bool)
    phi_hat = np.where(small, 0.0, 1j * (S2 * q1 - S1 * q2) / np.where(small, 1.0, den))
    phi = np.fft.ifft2(phi_hat).real
    return ScalarField(cell, phi - phi.mean(), "stream_function")


def write_trace_csv(path, trace: FlowTrace) -> None:
    N = trace.unwrapped.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        head = ["t"] + [f"x{k + 1}" for k in range(N)] + (["w"] if trace.w is not None else [])
        wr.writerow(head)
        for i, t in enumerate(trace.times):
            row = [repr(float(t))] + [repr(float(v)) for v in trace.unwrapped[i]]
            if trace.w is not None:
                row.append(repr(float(trace.w[i])))
            wr.writerow(row)
