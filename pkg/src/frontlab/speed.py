"""Minimal front speed ``c* = min_{lam > 0} k(lam) / lam`` and amplitude sweeps."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .discrete import OperatorSpec, assemble
from .eigen import principal_eigenvalue

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5) - 1) / 2
BRACKET = (1e-3, 1e2)
N_COARSE = 25
LAMBDA_RTOL = 1e-6


@dataclass
class SpeedPoint:
    M: float
    lam_star: float
    c_star: float
    k: float
    scheme: str
    resolution: tuple
    interior: bool = True
    scan: list = field(default_factory=list, repr=False)

    @property
    def c_over_M(self) -> float:
        return self.c_star / self.M if self.M > 0 else math.inf


@dataclass
class SpeedCurve:
    points: list

    def __post_init__(self):
        Ms = [p.M for p in self.points]
        if any(b <= a for a, b in zip(Ms, Ms[1:])):
            raise ValueError("amplitudes must be strictly increasing")

    @property
    def Ms(self) -> np.ndarray:
        return np.array([p.M for p in self.points])

    @property
    def c_over_M(self) -> np.ndarray:
        return np.array([p.c_over_M for p in self.points])


@dataclass
class LimitEstimate:
    limit: float
    last_ratio: float
    differences: np.ndarray
    monotone: bool


class SweepError(RuntimeError):
    def __init__(self, message, curve: SpeedCurve):
        super().__init__(message)
        self.curve = curve


class _SpeedFunction:
    """``lam -> k(lam) / lam`` with warm-started eigen solves and a cache."""

    def __init__(self, cell, A, q, zeta, e, M, scheme, eig_tol):
        self.args = (cell, A, q, M, zeta, np.asarray(e, float))
        self.scheme = scheme
        self.eig_tol = eig_tol
        self.cache = {}
        self.start = None

    def eig(self, lam: float):
        if lam not in self.cache:
            cell, A, q, M, zeta, e = self.args
            lmap = assemble(OperatorSpec(cell, A, q, M, zeta, e, lam, self.scheme))
            res = principal_eigenvalue(lmap, tol=self.eig_tol, start=self.start)
            self.start = res.eigenfunction.values
            self.cache[lam] = res
        return self.cache[lam]

    def __call__(self, lam: float) -> float:
        return self.eig(lam).k / lam


def golden_section(f: Callable, a: float, b: float, rtol: float = LAMBDA_RTOL):
    """Minimise ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rtol * 0.5 * (abs(a) + abs(b)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def minimal_speed(cell, A, q, zeta, e, M: float, scheme: str = "auto",
                  bracket: Sequence[float] = BRACKET, n_coarse: int = N_COARSE,
                  rtol: float = LAMBDA_RTOL, eig_tol: float = 1e-8) -> SpeedPoint:
    f = _SpeedFunction(cell, A, q, zeta, e, M, scheme, eig_tol)
    lo, hi = bracket
    interior = True
    for attempt in range(2):
        grid = np.geomspace(lo, hi, n_coarse)
        vals = np.array([f(lam) for lam in grid])
        i = int(np.argmin(vals))
        if 0 < i < n_coarse - 1:
            break
        if attempt == 0:
            lo, hi = (lo / 10, hi) if i == 0 else (lo, hi * 10)
            log.info("minimiser at bracket edge; widening to [%g, %g]", lo, hi)
        else:
            interior = False
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_coarse - 1)]
    lam, c = golden_section(f, a, b, rtol)
    if c > vals[i]:
        lam, c = grid[i], vals[i]
    res = f.eig(lam)
    scan = list(zip(grid.tolist(), vals.tolist()))
    return SpeedPoint(float(M), float(lam), float(res.k / lam), float(res.k), res.scheme,
                      tuple(cell.resolution), interior, scan)


def _sweep_job(args):
    cell, A, q, zeta, e, M, scheme = args
    return minimal_speed(cell, A, q, zeta, e, M, scheme=scheme)


def amplitude_sweep(cell, A, q, zeta, e, Ms: Sequence[float], scheme: str = "auto",
                    rebuild: Optional[Callable] = None, peclet_max: Optional[float] = None,
                    workers: int = 1) -> SpeedCurve:
    """One SpeedPoint per amplitude.

    When ``rebuild(resolution) -> (cell, A, q, zeta)`` and ``peclet_max`` are
    given, the grid is doubled until ``M max|q| h / (2 alpha1) <= peclet_max``
    on every axis, bounding the numerical diffusion of the upwind scheme.
    """
    Ms = [float(m) for m in Ms]
    if any(m < 0 for m in Ms) or any(b <= a for a, b in zip(Ms, Ms[1:])):
        raise ValueError("amplitudes must be nonnegative and strictly increasing")
    jobs = []
    for M in Ms:
        c, a, qq, z = cell, A, q, zeta
        if rebuild is not None and peclet_max is not None and qq is not None:
            res = list(c.resolution)
            while M * qq.max_norm() * max(c.spacing) / (2 * a.alpha1) > peclet_max:
                res = [2 * n for n in res]
                c, a, qq, z = rebuild(tuple(res))
        if workers > 1 and qq is not None:
            qq = replace(qq, func=None)  # analytic closures are not picklable; unused here
        jobs.append((c, a, qq, z, e, M, scheme))
    points = []
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                for p in ex.map(_sweep_job, jobs):
                    points.append(p)
        else:
            for job in jobs:
                points.append(_sweep_job(job))
    except Exception as exc:
        raise SweepError(f"sweep aborted after {len(points)} points: {exc}", SpeedCurve(points)) from exc
    return SpeedCurve(points)


def estimate_linear_limit(curve: SpeedCurve, tol: float = 1e-12) -> LimitEstimate:
    """Extrapolate ``lim c*/M`` assuming ``c*/M = limit + C / M``.

    The two-term model fitted to the last two points gives
    ``limit = (c_2 - c_1) / (M_2 - M_1)``.
    """
    pts = [p for p in curve.points if p.M > 0]
    if len(pts) < 3:
        raise ValueError("need at least 3 points with M > 0")
    ratios = np.array([p.c_over_M for p in pts])
    diffs = np.diff(ratios)
    monotone = bool(np.all(diffs >= 0) or np.all(diffs <= 0))
    p1, p2 = pts[-2], pts[-1]
    if abs(diffs[-1]) <= tol * max(abs(ratios[-1]), 1.0):
        limit = float(ratios[-1])
    else:
        limit = (p2.c_star - p1.c_star) / (p2.M - p1.M)
    return LimitEstimate(float(limit), float(ratios[-1]), diffs, monotone)


SPEED_COLUMNS = ("M", "lambda_star", "k", "c_star", "c_star_over_M", "scheme", "resolution")


def write_speed_csv(path, curve: SpeedCurve) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SPEED_COLUMNS)
        for p in curve.points:
            ratio = repr(p.c_over_M) if p.M > 0 else "inf"
            wr.writerow([repr(p.M), repr(p.lam_star), repr(p.k), repr(p.c_star), ratio, p.scheme,
                         "x".join(str(n) for n in p.resolution)])
