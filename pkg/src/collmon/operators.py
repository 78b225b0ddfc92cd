"""Finite-dimensional operator algebra.

Operators are plain complex ``numpy`` arrays.  Superoperators are stored as
``dim**2 x dim**2`` matrices acting on column-stacked (Fortran-order)
vectorizations, so that ``vec(A X B) = (B.T kron A) vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10


def as_operator(x, dim: int | None = None) -> np.ndarray:
    """Return ``x`` as a square complex matrix, checking the dimension."""
    a = np.asarray(x, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be a square matrix, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ValueError(f"operator dimension {a.shape[0]} != expected {dim}")
    return a


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def is_hermitian(a, tol: float = HERMITIAN_TOL) -> bool:
    a = as_operator(a)
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


def min_eigenvalue(a) -> float:
    a = as_operator(a)
    return float(np.linalg.eigvalsh(0.5 * (a + dagger(a)))[0])


def is_positive_semidefinite(a, tol: float = PSD_TOL) -> bool:
    return is_hermitian(a, tol) and min_eigenvalue(a) >= -tol


def is_unitary(a, tol: float = HERMITIAN_TOL) -> bool:
    a = as_operator(a)
    resid = dagger(a) @ a - np.eye(a.shape[0])
    return bool(np.max(np.abs(resid), initial=0.0) <= tol)


@dataclass(frozen=True)
class CompositeSpace:
    """System factor first: total dimension ``dim_sys * dim_env``."""

    dim_sys: int
    dim_env: int

    def __post_init__(self):
        if self.dim_sys < 1 or self.dim_env < 1:
            raise ValueError("factor dimensions must be positive")

    @property
    def dim(self) -> int:
        return self.dim_sys * self.dim_env


def tensor_product(a, b) -> np.ndarray:
    return np.kron(as_operator(a), as_operator(b))


def partial_trace_env(x, space: CompositeSpace) -> np.ndarray:
    """Trace out the environment factor of an operator on ``space``."""
    x = np.asarray(x, dtype=complex)
    if x.shape != (space.dim, space.dim):
        raise ValueError(
            f"operator of shape {x.shape} does not live on a "
            f"{space.dim_sys}x{space.dim_env} composite space"
        )
    ds, de = space.dim_sys, space.dim_env
    return np.einsum("ajbj->ab", x.reshape(ds, de, ds, de))


def positive_sqrt(g, tol: float = PSD_TOL) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix.

    Eigenvalues in ``[-tol, 0)`` are treated as rounding noise and clipped.
    """
    g = as_operator(g)
    if not is_hermitian(g, tol):
        raise ValueError("positive_sqrt requires a Hermitian matrix")
    w, v = np.linalg.eigh(0.5 * (g + dagger(g)))
    if w[0] < -tol:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ dagger(v)


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


@dataclass(frozen=True)
class Superoperator:
    """Linear map on ``dim x dim`` operators, column-stacking convention."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d2 = m.shape[0]
        d = int(round(np.sqrt(d2)))
        if m.shape != (d2, d2) or d * d != d2:
            raise ValueError(f"superoperator matrix must be d^2 x d^2, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    def __call__(self, x) -> np.ndarray:
        return unvec(self.matrix @ vec(as_operator(x, self.dim)), self.dim)

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.matrix @ other.matrix)

    @classmethod
    def from_map(cls, f: Callable[[np.ndarray], np.ndarray], dim: int) -> "Superoperator":
        """Tabulate a linear map by its action on matrix units."""
        m = np.empty((dim * dim, dim * dim), dtype=complex)
        for k in range(dim * dim):
            e = np.zeros(dim * dim, dtype=complex)
            e[k] = 1.0
            m[:, k] = vec(f(unvec(e, dim)))
        return cls(m)

    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray]) -> "Superoperator":
        ks = [as_operator(k) for k in kraus]
        d = ks[0].shape[0]
        m = np.zeros((d * d, d * d), dtype=complex)
        for k in ks:
            m += np.kron(k.conj(), k)
        return cls(m)

    @classmethod
    def identity(cls, dim: int) -> "Superoperator":
        return cls(np.eye(dim * dim, dtype=complex))


def choi_matrix(m: Superoperator) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) m(|i><j|)`` (input factor first).

    ``m`` is completely positive iff the result is PSD and trace preserving
    iff tracing out the output factor leaves the identity.
    """
    d = m.dim
    # vec index of |i><j| is i + d*j; output entry (a, b) sits at a + d*b
    t = m.matrix.reshape(d, d, d, d, order="F")  # [a, b, i, j]
    return t.transpose(2, 0, 3, 1).reshape(d * d, d * d)


def choi_negativity(m: Superoperator) -> float:
    """Largest negative eigenvalue magnitude of the Choi matrix (0 if CP)."""
    c = choi_matrix(m)
    return max(0.0, -min_eigenvalue(c))


def trace_preservation_residual(m: Superoperator) -> float:
    """``max |Tr_out(Choi) - I|``; zero for trace-preserving maps."""
    d = m.dim
    c = choi_matrix(m).reshape(d, d, d, d)  # [i, a, j, b]
    reduced = np.einsum("iaja->ij", c)
    return float(np.max(np.abs(reduced - np.eye(d))))
