"""Transition energy between two tangent balls and its dependence on dimension.

Two unit balls centred at ``(0, ..., 0, +-1)`` touch at the origin.  A function
pinned to ``lam`` on one and ``mu`` on the other has Dirichlet energy bounded
below by a radial integral that diverges like ``sqrt(n)`` (N = 2) or
``log n`` (N = 3) when the balls are inflated to radius ``1 - 1/n``, while for
``N >= 4`` a finite-energy transition exists.

Energies are computed in cylindrical coordinates ``(r, z)`` with ``r`` the
distance to the axis through both centres; the angular integral contributes
``|S^{N-2}|`` and the measure ``r^{N-2} dr dz``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate

from .cell import sphere_area

U_RADIUS = 1.5
U_HALF_HEIGHT = 2.5
CLASSES = ("sqrt_growth", "log_growth", "bounded")


@dataclass
class TransitionEnergyResult:
    N: int
    n: int
    lower_bound: float
    energy: float
    lam: float = 1.0
    mu: float = 0.0
    resolution: int = 0
    residual: float = 0.0
    classification: str = ""


class AxisymGrid:
    """Cell-centred grid on ``[0, r_max] x [z0, z1]`` with measure ``r^p dr dz``.

    ``stiffness`` is the two-point flux discretisation of
    ``int (u_r^2 + u_z^2) r^p dr dz`` with natural (zero-flux) conditions on
    every side; the ``r = 0`` face carries weight ``0^p``.
    """

    def __init__(self, r_max: float, z0: float, z1: float, spacing: float, power: float):
        self.nr = int(round(r_max / spacing))
        self.nz = int(round((z1 - z0) / spacing))
        self.dr = r_max / self.nr
        self.dz = (z1 - z0) / self.nz
        self.power = power
        self.r = (np.arange(self.nr) + 0.5) * self.dr
        self.z = z0 + (np.arange(self.nz) + 0.5) * self.dz
        self.R, self.Z = np.meshgrid(self.r, self.z, indexing="ij")
        edges = np.arange(self.nr + 1) * self.dr
        # exact cell integral of r^p
        self.cell_weight = (edges[1:] ** (power + 1) - edges[:-1] ** (power + 1)) / (power + 1)
        self.face_weight = edges[1:-1] ** power

    @property
    def shape(self):
        return (self.nr, self.nz)

    @property
    def size(self):
        return self.nr * self.nz

    def mass(self) -> np.ndarray:
        """Diagonal of the weighted mass matrix, flattened."""
        return np.repeat(self.cell_weight * self.dz, self.nz)

    def stiffness(self) -> sp.csr_matrix:
        nr, nz = self.shape
        idx = np.arange(self.size).reshape(nr, nz)
        rows, cols, vals = [], [], []
        # r-faces between (i, j) and (i+1, j)
        c = np.repeat(self.face_weight * self.dz / self.dr, nz)
        a, b = idx[:-1, :].reshape(-1), idx[1:, :].reshape(-1)
        rows.append(a); cols.append(b); vals.append(c)
        # z-faces between (i, j) and (i, j+1)
        c = np.repeat(self.cell_weight / self.dz, nz - 1)
        a, b = idx[:, :-1].reshape(-1), idx[:, 1:].reshape(-1)
        rows.append(a); cols.append(b); vals.append(c)
        a = np.concatenate(rows); b = np.concatenate(cols); c = np.concatenate(vals)
        off = sp.coo_matrix((-c, (a, b)), shape=(self.size, self.size))
        off = off + off.T
        diag = -np.asarray(off.sum(axis=1)).ravel()
        return (off + sp.diags(diag)).tocsr()

    def inside_ball(self, zc: float, radius: float) -> np.ndarray:
        return (self.R**2 + (self.Z - zc) ** 2 < radius**2).reshape(-1)


def radial_lower_bound_integral(N: int, n: int) -> float:
    """``int_0^{1-1/n} 1/2 r^{N-2} / (1/n + n r^2/(n-1)) dr`` by adaptive quadrature."""
    f = lambda r: 0.5 * r ** (N - 2) / (1.0 / n + n * r * r / (n - 1))
    val, _ = integrate.quad(f, 0.0, 1.0 - 1.0 / n, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def radial_closed_form(N: int, n: int) -> float:
    """Antiderivatives of the radial integral for N = 2 and N = 3."""
    if N == 2:
        return 0.5 * math.sqrt(n - 1) * math.atan(n * (1 - 1 / n) / math.sqrt(n - 1))
    if N == 3:
        return (n - 1) / (4 * n) * math.log(n)
    raise ValueError("closed form available for N = 2, 3 only")


def lower_bound_energy(N: int, n: int, lam: float = 1.0, mu: float = 0.0) -> float:
    if N < 2 or n < 2:
        raise ValueError("need N >= 2 and n >= 2")
    return sphere_area(N - 2) * (lam - mu) ** 2 * radial_lower_bound_integral(N, n)


def _quad(f, a, b):
    val, err = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=500)
    return val, err


def _terms(r, t):
    """``(1 - r^2, 1 - sqrt(1 - r^2))`` without cancellation; ``t = 1 - r``."""
    one_m_r2 = t * (2.0 - t)
    s = math.sqrt(one_m_r2)
    return one_m_r2, r * r / (1.0 + s)


def axial_integrand(N: int):
    def f(r, t):
        return r ** (N - 2) / (2.0 * _terms(r, t)[1])
    return f


def radial_integrand(N: int):
    def f(r, t):
        a, b = _terms(r, t)
        return r**N / (a * b)
    return f


def explicit_candidate_energy(N: int, lam: float = 1.0, mu: float = 0.0, eps: float = 0.0):
    """Axial and radial energies over the lens between the balls of the candidate
    ``u = (lam+mu)/2 + (lam-mu) x_N / (2 (1 - sqrt(1 - r^2)))``, with ``r``
    restricted to ``[eps, 1 - eps]``.

    A divergent integral is reported as ``inf``.
    """
    if N < 2 or not 0 <= eps < 0.5:
        raise ValueError("need N >= 2 and 0 <= eps < 0.5")
    S = sphere_area(N - 2) * (lam - mu) ** 2
    axial = S * improper_integral(axial_integrand(N), eps)
    radial = S / 6.0 * improper_integral(radial_integrand(N), eps)
    return axial, radial


def improper_integral(f, eps: float = 0.0, rtol: float = 1e-12, min_width: float = 1e-15) -> float:
    """``int_eps^{1-eps} f(r, 1-r) dr`` for ``f`` possibly singular at both ends.

    With ``eps = 0`` each end is approached through decades ``[10^-k-1, 10^-k]``;
    the sum is accepted once a decade adds less than ``rtol`` of the total and
    declared divergent (``inf``) when decade contributions stop shrinking.
    If ``min_width`` is reached first, the remaining decades are summed as a
    geometric series with the ratio of the last two.
    """
    lo_f = lambda r: f(r, 1.0 - r)
    hi_f = lambda t: f(1.0 - t, t)
    if eps > 0:
        return _quad(lo_f, eps, 0.5)[0] + _quad(hi_f, eps, 0.5)[0]
    total = _quad(lo_f, 0.1, 0.5)[0] + _quad(hi_f, 0.1, 0.5)[0]
    for g in (lo_f, hi_f):
        a, prev = 0.1, None
        while True:
            inc = _quad(g, a / 10.0, a)[0]
            total += inc
            if prev is not None and abs(inc) >= 0.9 * abs(prev) and abs(inc) > rtol * abs(total):
                return math.inf
            if abs(inc) <= rtol * abs(total) or a / 10.0 < min_width:
                if prev is not None and 0.0 < inc / prev < 0.9:
                    rho = inc / prev
                    total += inc * rho / (1.0 - rho)  # geometric tail of the untouched decades
                break
            prev, a = inc, a / 10.0
    return total


def min_transition_energy(N: int, n: int, resolution: int = 128, lam: float = 1.0,
                          mu: float = 0.0, tol: float = 1e-10) -> TransitionEnergyResult:
    """Minimal weighted Dirichlet energy in ``U = {r <= 1.5, |z| <= 2.5}`` of ``u``
    pinned to ``lam`` on ``B_{1,n}`` and ``mu`` on ``B_{2,n}``.

    ``resolution`` is the number of cells per unit length; the gap ``2/n``
    between the shrunken balls must span at least four cells.
    """
    if N < 2 or n < 2:
        raise ValueError("need N >= 2 and n >= 2")
    spacing = 1.0 / resolution
    if 2.0 / n < 4 * spacing:
        raise ValueError(f"gap 2/n under-resolved; need resolution >= {2 * n}")
    grid = AxisymGrid(U_RADIUS, -U_HALF_HEIGHT, U_HALF_HEIGHT, spacing, N - 2)
    rad = 1.0 - 1.0 / n
    p1 = grid.inside_ball(1.0, rad)
    p2 = grid.inside_ball(-1.0, rad)
    energy, resid, _ = pinned_energy(grid, p1, p2, lam, mu)
    if resid > tol:
        raise RuntimeError(f"solver residual {resid:.2e} above {tol:.0e}")
    energy *= sphere_area(N - 2)
    return TransitionEnergyResult(N, n, lower_bound_energy(N, n, lam, mu), energy, lam, mu,
                                  resolution, resid)


def pinned_energy(grid: AxisymGrid, pin1: np.ndarray, pin2: np.ndarray, lam: float, mu: float,
                  K=None):
    """Harmonic (energy-minimising) extension of the pinned values; returns
    ``(energy, relative residual, u)`` with energy ``u^T K u`` (no angular factor)."""
    K = grid.stiffness() if K is None else K
    pinned = pin1 | pin2
    free = ~pinned
    u = np.zeros(grid.size)
    u[pin1] = lam
    u[pin2] = mu
    if lam == mu:
        u[free] = lam
        return 0.0, 0.0, u
    Kff = K[free][:, free].tocsc()
    rhs = -(K[free][:, pinned] @ u[pinned])
    u[free] = spla.spsolve(Kff, rhs)
    resid = float(np.linalg.norm(Kff @ u[free] - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return float(u @ (K @ u)), resid, u


@dataclass
class GrowthFit:
    classification: str
    exponent: float
    residuals: dict
    ambiguous: bool
    coefficients: dict = field(default_factory=dict)


_MODELS = {
    "sqrt_growth": np.sqrt,
    "log_growth": np.log,
}
SATURATION_EXPONENTS = np.linspace(0.25, 3.0, 276)


def _rel_rms(X, E):
    sol, *_ = np.linalg.lstsq(X, E, rcond=None)
    return float(np.sqrt(np.mean((X @ sol - E) ** 2)) / np.sqrt(np.mean(E**2))), tuple(sol)


def growth_rate_fit(results, ambiguity: float = 0.05) -> GrowthFit:
    """Classify ``E(n)`` over geometrically spaced ``n`` as sqrt, log or bounded.

    Models are ``a + b sqrt(n)``, ``a + b log(n)`` and, for a bounded sequence,
    the saturating ``a + b n^(-p)`` with ``p >= 1/4`` scanned on a grid.  Each is
    scored by its RMS residual relative to the RMS of ``E``; the smallest wins.
    The fit is ambiguous when the runner-up residual is within ``ambiguity``
    (relative) of the winner.  ``exponent`` is the log-log slope of the
    increments ``E(2n) - E(n)``, reported as a diagnostic.
    """
    if len(results) < 4:
        raise ValueError("need at least 4 results")
    ns = np.array([r.n if hasattr(r, "n") else r[0] for r in results], dtype=float)
    E = np.array([r.energy if hasattr(r, "energy") else r[1] for r in results], dtype=float)
    order = np.argsort(ns)
    ns, E = ns[order], E[order]
    if np.ptp(E) <= 1e-12 * max(float(np.abs(E).max()), 1e-300):
        return GrowthFit("bounded", -np.inf, {c: 0.0 for c in CLASSES}, False, {})
    one = np.ones_like(ns)
    residuals, coeffs = {}, {}
    for name, g in _MODELS.items():
        residuals[name], coeffs[name] = _rel_rms(np.column_stack([one, g(ns)]), E)
    best = None
    for p in SATURATION_EXPONENTS:
        r, sol = _rel_rms(np.column_stack([one, ns**-p]), E)
        if best is None or r < best[0]:
            best = (r, sol + (float(p),))
    residuals["bounded"], coeffs["bounded"] = best

    inc = np.diff(E)
    mids = np.sqrt(ns[1:] * ns[:-1])
    p = float(np.polyfit(np.log(mids), np.log(inc), 1)[0]) if np.all(inc > 0) else -np.inf
    ranked = sorted(residuals, key=residuals.get)
    r1, r2 = residuals[ranked[0]], residuals[ranked[1]]
    ambiguous = r2 <= (1 + ambiguity) * r1 and r1 > 1e-12
    return GrowthFit(ranked[0], p, residuals, bool(ambiguous), coeffs)


H1_COLUMNS = ("N", "n", "lower_bound", "variational_energy", "classification")


def write_h1_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(H1_COLUMNS)
        for r in results:
            wr.writerow([r.N, r.n, repr(r.lower_bound), repr(r.energy), r.classification])
