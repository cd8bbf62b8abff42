"""Autonomous ODEs with quadratic vector fields ``u' = Q(u) + B u``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ValidationError


def as_state(u, dim: int | None = None, *, name: str = "u") -> np.ndarray:
    """Coerce ``u`` to a finite 1-D float array, optionally of length ``dim``."""
    arr = np.asarray(u, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries: {arr}")
    return arr


@dataclass(frozen=True, eq=False)
class QuadraticSystem:
    """Dense representation of ``f(u) = Q(u) + B u``.

    ``quad[i, j, k]`` is symmetric in ``(j, k)`` so that
    ``Q(u)_i = sum_jk quad[i, j, k] u_j u_k``.  The tensor is symmetrized on
    construction; arrays are made read-only.
    """

    quad: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        q = np.array(self.quad, dtype=float)
        b = np.array(self.linear, dtype=float)
        if q.ndim != 3 or q.shape[0] != q.shape[1] or q.shape[1] != q.shape[2]:
            raise ValidationError(f"quadratic tensor must have shape (m, m, m), got {q.shape}")
        m = q.shape[0]
        if m == 0:
            raise ValidationError("system dimension must be positive")
        if b.shape != (m, m):
            raise ValidationError(f"linear part must have shape {(m, m)}, got {b.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(b))):
            raise ValidationError("system coefficients must be finite")
        q = 0.5 * (q + q.transpose(0, 2, 1))
        q.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "quad", q)
        object.__setattr__(self, "linear", b)

    @property
    def dim(self) -> int:
        return self.quad.shape[0]

    def field(self, u) -> np.ndarray:
        return eval_field(self, u)

    def jacobian(self, u) -> np.ndarray:
        return eval_jacobian(self, u)

    def quadratic_part(self, u) -> np.ndarray:
        u = as_state(u, self.dim)
        return np.einsum("ijk,j,k->i", self.quad, u, u)


def lvs_to_quadratic(r, A) -> QuadraticSystem:
    """Lotka-Volterra system ``u_i' = u_i (r_i + sum_j A_ij u_j)`` in quadratic form."""
    r = np.asarray(r, dtype=float)
    A = np.asarray(A, dtype=float)
    if r.ndim != 1:
        raise ValidationError(f"growth rates must be a vector, got shape {r.shape}")
    m = r.shape[0]
    if A.shape != (m, m):
        raise ValidationError(f"interaction matrix must have shape {(m, m)}, got {A.shape}")
    eye = np.eye(m)
    # q[i, j, k] = (delta_ij A_ik + delta_ik A_ij) / 2
    q = 0.5 * (eye[:, :, None] * A[:, None, :] + eye[:, None, :] * A[:, :, None])
    return QuadraticSystem(q, np.diag(r))


def eval_field(sys: QuadraticSystem, u) -> np.ndarray:
    u = as_state(u, sys.dim)
    out = np.empty(sys.dim)
    _kernels.field(sys.quad, sys.linear, u, out)
    return out


def eval_jacobian(sys: QuadraticSystem, u) -> np.ndarray:
    """Jacobian ``J_ij = 2 sum_k quad[i, j, k] u_k + linear[i, j]``."""
    u = as_state(u, sys.dim)
    out = np.empty((sys.dim, sys.dim))
    _kernels.jacobian(sys.quad, sys.linear, u, out)
    return out


def polarize(sys: QuadraticSystem, x, y) -> np.ndarray:
    """Symmetric bilinear form with ``polarize(sys, u, u) == Q(u)``.

    Computed directly from the symmetric tensor, which equals
    ``(Q(x + y) - Q(x) - Q(y)) / 2`` without the cancellation.
    """
    x = as_state(x, sys.dim, name="x")
    y = as_state(y, sys.dim, name="y")
    return np.einsum("ijk,j,k->i", sys.quad, x, y)
