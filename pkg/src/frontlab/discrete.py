"""Finite-difference assembly of the linearised front operator.

For a unit direction ``e``, wave number ``lam`` and amplitude ``M``::

    L psi = div(A grad psi) - 2 lam e.A grad psi + M q.grad psi
            + [lam^2 e.A e - lam div(A e) - lam M q.e + zeta] psi

Diffusion is in flux form (face-averaged diagonal coefficients, central
cross terms), ``div(A e)`` uses the central stencil, and the combined drift
``b = M q - 2 lam A e`` is discretised either centrally or by first-order
upwinding.  The upwind map has nonnegative off-diagonal entries whenever
``A`` is diagonal, which keeps the resolvent positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .cell import DiffusionSpec, PeriodicCell, ScalarField, VectorField

SCHEMES = ("central", "upwind", "auto")


@dataclass
class OperatorSpec:
    cell: PeriodicCell
    A: DiffusionSpec
    q: Optional[VectorField]
    M: float
    zeta: ScalarField
    e: np.ndarray
    lam: float
    scheme: str = "auto"

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=float)
        if self.e.shape != (self.cell.N,):
            raise ValueError(f"direction must have {self.cell.N} components")
        if abs(np.linalg.norm(self.e) - 1.0) > 1e-12:
            raise ValueError("direction must be a unit vector")
        if not self.lam > 0:
            raise ValueError(f"wave number must be positive, got {self.lam}")
        if self.M < 0:
            raise ValueError("amplitude must be nonnegative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        cells = [self.A.cell, self.zeta.cell] + ([self.q.cell] if self.q is not None else [])
        if any(c != self.cell for c in cells):
            raise ValueError("operator inputs live on different cells")


class LinearMap:
    """Applicable periodic operator with a cached diagonal and shift bound.

    ``shift_bound`` is an upper bound on the principal eigenvalue used as the
    initial resolvent shift.
    """

    def __init__(self, cell: PeriodicCell, matrix: sp.csr_matrix, scheme: str,
                 shift_bound: float, meta: Optional[dict] = None):
        self.cell = cell
        self.matrix = matrix.tocsr()
        self.scheme = scheme
        self.diagonal = self.matrix.diagonal()
        self.shift_bound = float(shift_bound)
        self.meta = meta or {}
        off = self.matrix - sp.diags(self.diagonal)
        self.min_offdiag = float(off.data.min()) if off.nnz else 0.0

    @property
    def n(self) -> int:
        return self.cell.size

    @property
    def is_metzler(self) -> bool:
        return self.min_offdiag >= -1e-12 * max(1.0, float(np.abs(self.diagonal).max()))

    def apply(self, psi) -> np.ndarray:
        """Apply to a ScalarField or flat/shaped array; returns the same layout."""
        if isinstance(psi, ScalarField):
            if psi.cell != self.cell:
                raise ValueError("field lives on a different cell")
            return ScalarField(self.cell, (self.matrix @ psi.values.reshape(-1)).reshape(self.cell.shape))
        arr = np.asarray(psi, dtype=float)
        if arr.size != self.n:
            raise ValueError(f"expected {self.n} values, got {arr.size}")
        return (self.matrix @ arr.reshape(-1)).reshape(arr.shape)

    def __matmul__(self, x):
        return self.apply(x)

    def to_dense(self) -> np.ndarray:
        """Brute force: apply to every unit vector."""
        out = np.empty((self.n, self.n))
        eye = np.zeros(self.n)
        for j in range(self.n):
            eye[j] = 1.0
            out[:, j] = self.apply(eye)
            eye[j] = 0.0
        return out


def _shift(cell: PeriodicCell, k: int, s: int) -> sp.csr_matrix:
    """``(S psi)_p = psi_{p + s e_k}`` with periodic wrap."""
    idx = np.arange(cell.size).reshape(cell.shape)
    cols = np.roll(idx, -s, axis=k).reshape(-1)
    return sp.csr_matrix((np.ones(cell.size), (np.arange(cell.size), cols)), shape=(cell.size, cell.size))


def _diag(a: np.ndarray) -> sp.dia_matrix:
    return sp.diags(np.asarray(a, dtype=float).reshape(-1))


def diffusion_matrix(cell: PeriodicCell, A: DiffusionSpec) -> sp.csr_matrix:
    """Flux-form ``div(A grad .)``; ``-diffusion_matrix`` is the discrete
    Dirichlet-energy form (per unit cell volume element)."""
    N = cell.N
    h = cell.spacing
    I = sp.identity(cell.size, format="csr")
    Av = A.values
    L = sp.csr_matrix((cell.size, cell.size))
    for i in range(N):
        Sp, Sm = _shift(cell, i, 1), _shift(cell, i, -1)
        a_plus = 0.5 * (Av[i, i] + np.roll(Av[i, i], -1, axis=i))
        a_minus = np.roll(a_plus, 1, axis=i)
        L = L + (_diag(a_plus) @ (Sp - I) - _diag(a_minus) @ (I - Sm)) / h[i] ** 2
        for j in range(N):
            if i != j and np.any(Av[i, j]):
                Di = (Sp - Sm) / (2 * h[i])
                Dj = (_shift(cell, j, 1) - _shift(cell, j, -1)) / (2 * h[j])
                L = L + Di @ _diag(Av[i, j]) @ Dj
    return L.tocsr()


def _assemble(spec: OperatorSpec, scheme: str) -> sp.csr_matrix:
    cell, N = spec.cell, spec.cell.N
    h = cell.spacing
    I = sp.identity(cell.size, format="csr")
    Sp = [_shift(cell, k, 1) for k in range(N)]
    Sm = [_shift(cell, k, -1) for k in range(N)]
    D = [(Sp[k] - Sm[k]) / (2 * h[k]) for k in range(N)]

    L = diffusion_matrix(cell, spec.A)

    Ae = spec.A.apply_direction(spec.e)
    drift = -2.0 * spec.lam * Ae
    qe = np.zeros(cell.shape)
    if spec.q is not None and spec.M != 0:
        drift = drift + spec.M * spec.q.values
        qe = np.einsum("i...,i->...", spec.q.values, spec.e)
    for j in range(N):
        b = drift[j]
        if not np.any(b):
            continue
        if scheme == "central":
            L = L + _diag(b) @ D[j]
        else:
            L = L + (_diag(np.maximum(b, 0)) @ (Sp[j] - I) + _diag(np.minimum(b, 0)) @ (I - Sm[j])) / h[j]

    div_Ae = cell.divergence(Ae)
    c = (spec.lam**2 * spec.A.quadratic(spec.e) - spec.lam * div_Ae
         - spec.lam * spec.M * qe + spec.zeta.values)
    return (L + _diag(c)).tocsr(), div_Ae


def assemble(spec: OperatorSpec) -> LinearMap:
    """Assemble the operator; ``scheme='auto'`` keeps the central scheme when
    it has nonnegative off-diagonal couplings and falls back to upwind."""
    scheme = spec.scheme
    if scheme == "auto":
        mat, div_Ae = _assemble(spec, "central")
        lm = _make_map(spec, mat, "central", div_Ae)
        if lm.is_metzler:
            return lm
        scheme = "upwind"
    mat, div_Ae = _assemble(spec, scheme)
    return _make_map(spec, mat, scheme, div_Ae)


def _make_map(spec: OperatorSpec, mat, scheme: str, div_Ae) -> LinearMap:
    qmax = spec.q.max_norm() if spec.q is not None else 0.0
    bound = (spec.lam**2 * spec.A.alpha2
             + spec.lam * (float(np.max(np.abs(div_Ae))) + spec.M * qmax)
             + float(spec.zeta.values.max()) + 1.0)
    meta = {"lam": spec.lam, "M": spec.M, "resolution": spec.cell.resolution}
    return LinearMap(spec.cell, mat, scheme, bound, meta)


def apply(lmap: LinearMap, psi: ScalarField) -> ScalarField:
    return lmap.apply(psi)
