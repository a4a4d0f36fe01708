"""Periodic computational cell, sampled fields and built-in incompressible flows.

Everything lives on a flat torus with a uniform node-centred grid: node
``(i_1, ..., i_N)`` sits at ``x_k = i_k * h_k`` with ``h_k = L_k / n_k`` and
index arithmetic wraps modulo ``n_k``.  Derivatives are second-order central
differences with periodic wrap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

V1, V2, EXTERIOR = 1, 2, 0
LABEL_NAMES = {V1: "V1", V2: "V2", EXTERIOR: "EXTERIOR"}

DIV_TOL_STREAM = 1e-10
DIV_TOL_DEFAULT = 1e-8
ZERO_AVERAGE_TOL = 1e-10


@dataclass(frozen=True)
class PeriodicCell:
    """Uniform grid on the torus ``prod_k [0, L_k)``."""

    periods: tuple
    resolution: tuple

    @property
    def N(self) -> int:
        return len(self.periods)

    @property
    def shape(self) -> tuple:
        return tuple(self.resolution)

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.periods, self.resolution))

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    @property
    def dV(self) -> float:
        return float(np.prod(self.spacing))

    def axis_coords(self, k: int) -> np.ndarray:
        return np.arange(self.resolution[k]) * self.spacing[k]

    def mesh(self) -> list:
        return np.meshgrid(*[self.axis_coords(k) for k in range(self.N)], indexing="ij")

    def wrap(self, index: Sequence[int]) -> tuple:
        return tuple(int(i) % n for i, n in zip(index, self.resolution))

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.dV)

    def average(self, values: np.ndarray) -> float:
        return float(np.mean(values))

    # -- periodic central-difference calculus -------------------------------

    def diff(self, values: np.ndarray, k: int) -> np.ndarray:
        h = self.spacing[k]
        return (np.roll(values, -1, axis=k) - np.roll(values, 1, axis=k)) / (2.0 * h)

    def gradient(self, values: np.ndarray) -> np.ndarray:
        return np.stack([self.diff(values, k) for k in range(self.N)])

    def divergence(self, components: np.ndarray) -> np.ndarray:
        return sum(self.diff(components[k], k) for k in range(self.N))


def build_cell(N: int, periods: Sequence[float], resolution: Sequence[int]) -> PeriodicCell:
    if int(N) != N or N < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {N!r}")
    if len(periods) != N or len(resolution) != N:
        raise ValueError(
            f"dimension mismatch: N={N}, {len(periods)} periods, {len(resolution)} grid counts"
        )
    if any(not (float(L) > 0) for L in periods):
        raise ValueError(f"periods must be positive, got {list(periods)}")
    if any(int(n) != n or n <= 0 for n in resolution):
        raise ValueError(f"grid counts must be positive integers, got {list(resolution)}")
    return PeriodicCell(tuple(float(L) for L in periods), tuple(int(n) for n in resolution))


def _check_same_cell(*cells: PeriodicCell) -> None:
    first = cells[0]
    for c in cells[1:]:
        if c != first:
            raise ValueError("fields live on different cells")


@dataclass
class ScalarField:
    cell: PeriodicCell
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.cell.shape:
            raise ValueError(f"expected values of shape {self.cell.shape}, got {self.values.shape}")

    @classmethod
    def constant(cls, cell: PeriodicCell, value: float, name: str = "") -> "ScalarField":
        return cls(cell, np.full(cell.shape, float(value)), name)

    @classmethod
    def from_function(cls, cell: PeriodicCell, func: Callable, name: str = "") -> "ScalarField":
        return cls(cell, np.broadcast_to(func(*cell.mesh()), cell.shape).copy(), name)

    def is_positive(self) -> bool:
        return bool(np.all(self.values > 0))

    def integral(self) -> float:
        return self.cell.integrate(self.values)


@dataclass
class VectorField:
    """Grid samples of an N-vector field, shape ``(N,) + cell.shape``.

    ``func`` optionally carries the continuum field (points of shape
    ``(P, N)`` to velocities of shape ``(P, N)``) used by trajectory
    integration; the grid samples agree with it to the order of the
    construction.
    """

    cell: PeriodicCell
    values: np.ndarray
    divergence_free: bool = False
    zero_average: bool = False
    div_tol: float = DIV_TOL_DEFAULT
    labels: Optional[np.ndarray] = None
    func: Optional[Callable] = None
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.cell.N,) + self.cell.shape:
            raise ValueError(
                f"expected values of shape {(self.cell.N,) + self.cell.shape}, got {self.values.shape}"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != self.cell.shape:
                raise ValueError("partition labels must have one entry per grid point")

    @property
    def N(self) -> int:
        return self.cell.N

    def divergence(self) -> np.ndarray:
        return self.cell.divergence(self.values)

    def max_divergence(self) -> float:
        return float(np.max(np.abs(self.divergence())))

    def max_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.values**2, axis=0))))

    def scaled(self, factor: float) -> "VectorField":
        func = None if self.func is None else (lambda p, f=self.func: factor * f(p))
        return VectorField(self.cell, factor * self.values, self.divergence_free, self.zero_average,
                           self.div_tol, self.labels, func, self.kind, dict(self.meta))

    def advective_derivative(self, w: np.ndarray) -> np.ndarray:
        """Central-difference ``q . grad w``."""
        return np.sum(self.values * self.cell.gradient(np.asarray(w, dtype=float)), axis=0)


@dataclass
class DiffusionSpec:
    cell: PeriodicCell
    values: np.ndarray
    alpha1: float
    alpha2: float

    def __post_init__(self):
        N = self.cell.N
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (N, N) + self.cell.shape:
            raise ValueError(f"diffusion field must have shape {(N, N) + self.cell.shape}")
        if not np.array_equal(self.values, np.swapaxes(self.values, 0, 1)):
            raise ValueError("diffusion matrix is not symmetric")
        if not 0 < self.alpha1 <= self.alpha2:
            raise ValueError("ellipticity bounds must satisfy 0 < alpha1 <= alpha2")
        mats = np.moveaxis(self.values.reshape(N, N, -1), -1, 0)
        eig = np.linalg.eigvalsh(mats)
        slack = 1e-12 * max(1.0, self.alpha2)
        if eig.min() < self.alpha1 - slack or eig.max() > self.alpha2 + slack:
            raise ValueError(
                f"diffusion eigenvalues in [{eig.min():.6g}, {eig.max():.6g}] "
                f"outside declared [{self.alpha1}, {self.alpha2}]"
            )

    @classmethod
    def identity(cls, cell: PeriodicCell, scale: float = 1.0) -> "DiffusionSpec":
        N = cell.N
        vals = np.zeros((N, N) + cell.shape)
        for i in range(N):
            vals[i, i] = scale
        return cls(cell, vals, scale, scale)

    def is_diagonal(self) -> bool:
        N = self.cell.N
        return all(not np.any(self.values[i, j]) for i in range(N) for j in range(N) if i != j)

    def apply_direction(self, e: np.ndarray) -> np.ndarray:
        """Pointwise ``A e`` as an ``(N,) + shape`` array."""
        return np.einsum("ij...,j->i...", self.values, np.asarray(e, dtype=float))

    def quadratic(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        return np.einsum("i,ij...,j->...", e, self.values, e)


@dataclass
class NonlinearitySpec:
    """Only the linearisation ``zeta = f_u(., 0)`` enters any computation."""

    zeta: ScalarField
    name: str = ""

    def __post_init__(self):
        if not self.zeta.is_positive():
            raise ValueError("zeta must be strictly positive everywhere")


@dataclass
class FlowSpec:
    """Declarative description of a built-in flow.

    kind ``shear``: ``q = amplitude * (profile(cross coords)) e_axis``;
    ``profile`` is a callable of the full mesh or one of ``sin``, ``cos``,
    ``two_bump``, ``zero``.
    kind ``cellular``: ``q = amplitude * perp-grad(sin(2 pi x1/L1) sin(2 pi x2/L2))``
    acting in the first two axes.
    kind ``two_cylinder``: axial flow inside two parallel cylinders of radius
    ``radius`` separated by ``gap``; ``profile`` is ``poiseuille``
    (``1 - (r/R)^2``) or ``zero_flux``.
    kind ``custom``: ``values`` (and optional ``labels``) given directly.
    """

    kind: str
    amplitude: float = 1.0
    profile: object = None
    axis: int = 0
    radius: float = 0.2
    gap: float = 0.0
    values: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None


_SHEAR_PRESETS = ("sin", "cos", "two_bump", "zero")


def two_bump(s: np.ndarray) -> np.ndarray:
    """Sign-balanced profile on ``[0, 1)``: a narrow tall positive bump and a
    wide shallow negative one, zero mean."""
    pos = np.exp(-((s - 0.25) / 0.06) ** 2)
    neg = np.exp(-((s - 0.7) / 0.15) ** 2)
    return pos - neg * (np.sum(pos) / np.sum(neg))


def _shear_profile(spec: FlowSpec, cell: PeriodicCell) -> np.ndarray:
    mesh = cell.mesh()
    cross = (spec.axis + 1) % cell.N
    s = mesh[cross] / cell.periods[cross]
    prof = spec.profile if spec.profile is not None else "sin"
    if callable(prof):
        return np.broadcast_to(prof(*mesh), cell.shape).astype(float)
    if prof == "sin":
        return np.sin(2 * np.pi * s)
    if prof == "cos":
        return np.cos(2 * np.pi * s)
    if prof == "zero":
        return np.zeros(cell.shape)
    if prof == "two_bump":
        # normalisation uses the 1-D samples so the cell average is exactly 0
        line = two_bump(cell.axis_coords(cross) / cell.periods[cross])
        shape = [1] * cell.N
        shape[cross] = -1
        return np.broadcast_to(line.reshape(shape), cell.shape).copy()
    raise ValueError(f"unknown shear profile {prof!r}; expected callable or one of {_SHEAR_PRESETS}")


def _make_shear(spec: FlowSpec, cell: PeriodicCell) -> VectorField:
    prof = _shear_profile(spec, cell)
    vals = np.zeros((cell.N,) + cell.shape)
    vals[spec.axis] = spec.amplitude * prof
    func = None
    if isinstance(spec.profile, str) or spec.profile is None:
        name = spec.profile or "sin"
        if name in ("sin", "cos", "zero"):
            cross = (spec.axis + 1) % cell.N
            Lc = cell.periods[cross]
            base = {"sin": np.sin, "cos": np.cos, "zero": lambda t: 0.0 * t}[name]

            def func(p, axis=spec.axis, cross=cross, Lc=Lc, base=base, amp=spec.amplitude):
                out = np.zeros_like(p, dtype=float)
                out[:, axis] = amp * base(2 * np.pi * p[:, cross] / Lc)
                return out

    # a field depending only on cross variables has zero discrete divergence
    return VectorField(cell, vals, divergence_free=True, zero_average=True,
                       div_tol=DIV_TOL_STREAM, func=func, kind="shear",
                       meta={"axis": spec.axis})


def _make_cellular(spec: FlowSpec, cell: PeriodicCell) -> VectorField:
    L1, L2 = cell.periods[0], cell.periods[1]
    mesh = cell.mesh()
    phi = spec.amplitude * np.sin(2 * np.pi * mesh[0] / L1) * np.sin(2 * np.pi * mesh[1] / L2)
    vals = np.zeros((cell.N,) + cell.shape)
    # discrete perp-gradient of the sampled stream function: exactly divergence-free
    vals[0] = -cell.diff(phi, 1)
    vals[1] = cell.diff(phi, 0)
    amp = spec.amplitude

    def func(p):
        k1, k2 = 2 * np.pi / L1, 2 * np.pi / L2
        out = np.zeros_like(p, dtype=float)
        out[:, 0] = -amp * k2 * np.sin(k1 * p[:, 0]) * np.cos(k2 * p[:, 1])
        out[:, 1] = amp * k1 * np.cos(k1 * p[:, 0]) * np.sin(k2 * p[:, 1])
        return out

    return VectorField(cell, vals, divergence_free=True, zero_average=True,
                       div_tol=DIV_TOL_STREAM, func=func, kind="cellular",
                       meta={"stream_function": phi})


def cylinder_geometry(cell: PeriodicCell, radius: float, gap: float, axis: int = 0) -> dict:
    """Centres of the two cylinder cross-sections.

    The cross-section coordinates are all axes except ``axis``; the centres sit
    on the line through the middle of the cell along the last cross axis,
    symmetric about the mid-plane ``x_last = L_last / 2`` so that index
    reflection ``j -> n - j`` maps one cylinder onto the other.
    """
    cross = [k for k in range(cell.N) if k != axis]
    sep = cross[-1]
    mid = cell.periods[sep] / 2.0
    c1 = [cell.periods[k] / 2.0 for k in cross]
    c2 = list(c1)
    c1[-1] = mid + radius + gap / 2.0
    c2[-1] = mid - radius - gap / 2.0
    return {"cross": cross, "sep_axis": sep, "center1": c1, "center2": c2}


def _make_two_cylinder(spec: FlowSpec, cell: PeriodicCell) -> VectorField:
    R, h, axis = float(spec.radius), float(spec.gap), spec.axis
    if R <= 0 or h < 0:
        raise ValueError("two_cylinder needs radius > 0 and gap >= 0")
    if cell.resolution[(axis + 1) % cell.N] < 2:
        raise ValueError("cross-section must be resolved")
    geo = cylinder_geometry(cell, R, h, axis)
    cross, sep = geo["cross"], geo["sep_axis"]
    if cell.resolution[sep] % 2:
        raise ValueError("the separation axis needs an even grid count for exact reflection")
    for k, c in zip(cross, geo["center1"]):
        if c - R < 0 or c + R > cell.periods[k] + 1e-12:
            raise ValueError("cylinder overflows the periodicity cell")
    if geo["center2"][-1] - R < -1e-12:
        raise ValueError("cylinder overflows the periodicity cell")

    mesh = cell.mesh()
    r2 = sum((mesh[k] - c) ** 2 for k, c in zip(cross, geo["center1"]))
    s2 = r2 / R**2
    inside = s2 < 1.0 - 1e-12
    prof = spec.profile or "poiseuille"
    if callable(prof):
        v = np.where(inside, prof(np.sqrt(s2)), 0.0)
        edge = float(np.abs(prof(np.array([1.0])))[0])
        if edge > 1e-12:
            raise ValueError("axial profile does not vanish on the cylinder boundary")
    elif prof == "poiseuille":
        v = np.where(inside, 1.0 - s2, 0.0)
    elif prof == "zero_flux":
        # (1 - s^2)(1 - beta s^2) with beta fixed on the samples so the flux is exactly 0
        a = np.sum(np.where(inside, 1.0 - s2, 0.0))
        b = np.sum(np.where(inside, (1.0 - s2) * s2, 0.0))
        beta = a / b
        v = np.where(inside, (1.0 - s2) * (1.0 - beta * s2), 0.0)
    else:
        raise ValueError(f"unknown cylinder profile {prof!r}")
    v = spec.amplitude * v

    # second cylinder: reflected, negated copy (index reflection j -> n - j)
    idx = (-np.arange(cell.resolution[sep])) % cell.resolution[sep]
    v_ref = np.take(v, idx, axis=sep)
    in_ref = np.take(inside, idx, axis=sep)
    if np.any(inside & in_ref):
        raise ValueError("cylinders overlap")
    vals = np.zeros((cell.N,) + cell.shape)
    vals[axis] = v - v_ref
    labels = np.full(cell.shape, EXTERIOR, dtype=np.int8)
    labels[inside] = V1
    labels[in_ref] = V2

    # flux of V1 through one cross-section x_axis = const
    nslab = cell.resolution[axis]
    flux = float(np.sum(v) / nslab * cell.dV / cell.spacing[axis])
    meta = {"radius": R, "gap": h, "axis": axis, "flux_V1": flux, **geo}
    return VectorField(cell, vals, divergence_free=True, zero_average=True,
                       div_tol=DIV_TOL_STREAM, labels=labels, kind="two_cylinder", meta=meta)


def make_flow(spec: FlowSpec, cell: PeriodicCell) -> VectorField:
    if not 0 <= spec.axis < cell.N:
        raise ValueError(f"axis {spec.axis} out of range for N={cell.N}")
    if spec.kind == "shear":
        q = _make_shear(spec, cell)
    elif spec.kind == "cellular":
        q = _make_cellular(spec, cell)
    elif spec.kind == "two_cylinder":
        q = _make_two_cylinder(spec, cell)
    elif spec.kind == "custom":
        if spec.values is None:
            raise ValueError("custom flow needs values")
        q = VectorField(cell, spec.amplitude * np.asarray(spec.values, dtype=float),
                        labels=spec.labels, kind="custom")
        q.divergence_free = q.max_divergence() <= DIV_TOL_DEFAULT * max(1.0, q.max_norm())
        q.zero_average = bool(np.all(np.abs(check_zero_average(q)) <= ZERO_AVERAGE_TOL))
        return q
    else:
        raise ValueError(f"unknown flow kind {spec.kind!r}")
    if q.max_divergence() > q.div_tol * max(1.0, q.max_norm()):
        raise ValueError(f"{spec.kind} flow failed the divergence check")
    return q


def check_zero_average(field: VectorField) -> np.ndarray:
    """Cell averages of every component."""
    return np.array([field.values[k].mean() for k in range(field.N)])


def slice_identity(q: VectorField, w: ScalarField, axis: int, tol: float = 1e-8):
    """Return ``(lhs, rhs)`` with ``lhs = int_C q_i w^2`` and
    ``rhs = L_i int_{x_i = 0} q_i w^2``.

    Raises ``ValueError`` when ``w`` is not a first integral of ``q`` to within
    ``tol * max|q| * max|grad w|`` (pointwise, central differences).
    """
    _check_same_cell(q.cell, w.cell)
    cell = q.cell
    grad = cell.gradient(w.values)
    resid = float(np.max(np.abs(np.sum(q.values * grad, axis=0))))
    scale = q.max_norm() * max(float(np.max(np.abs(grad))), 1e-300)
    if resid > tol * max(scale, 1e-300) and resid > 1e-14:
        raise ValueError(f"w is not a first integral of q: max|q.grad w| = {resid:.3e}")
    qi_w2 = q.values[axis] * w.values**2
    lhs = cell.integrate(qi_w2)
    dS = cell.dV / cell.spacing[axis]
    rhs = cell.periods[axis] * float(np.sum(np.take(qi_w2, 0, axis=axis)) * dS)
    return lhs, rhs


def write_field_csv(path, cell: PeriodicCell, columns: dict) -> None:
    """One row per grid point: index tuple, coordinates, then each named column."""
    mesh = cell.mesh()
    idx = np.indices(cell.shape)
    flat = {k: np.asarray(v).reshape(cell.size) for k, v in columns.items()}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"i{k + 1}" for k in range(cell.N)] + [f"x{k + 1}" for k in range(cell.N)]
                    + list(flat))
        ii = [a.reshape(-1) for a in idx]
        xx = [m.reshape(-1) for m in mesh]
        for p in range(cell.size):
            wr.writerow([int(a[p]) for a in ii] + [repr(float(x[p])) for x in xx]
                        + [repr(float(v[p])) for v in flat.values()])


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere ``S^dim`` in ``R^(dim+1)``."""
    return 2.0 * math.pi ** ((dim + 1) / 2.0) / math.gamma((dim + 1) / 2.0)


def ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)
