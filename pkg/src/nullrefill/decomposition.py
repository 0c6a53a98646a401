"""Task / null-space splitting of the joint-velocity space.

The task Jacobian ``J1`` (m1 x n) is inverted with a truncated-SVD
pseudo-inverse; its kernel is spanned by the rows of an orthonormal basis
``Z`` (m2 x n). Stacking ``[J1; N]`` with ``N = (Z Z^T)^-1 Z = Z`` gives the
extended Jacobian, whose inverse is available in closed form as
``[J1^+ | Z^T]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg.lapack import dsyevd

DEFAULT_SIGMA_TOL = 1e-8


class SingularityError(RuntimeError):
    """The task Jacobian lost rank; carries the smallest singular value."""

    def __init__(self, message: str, sigma_min: float):
        super().__init__(message)
        self.sigma_min = sigma_min


@dataclass(frozen=True)
class TaskDecomposition:
    J1: np.ndarray
    J1_pinv: np.ndarray
    Z: np.ndarray
    rank: int
    sigma_min: float
    sigma_max: float

    @property
    def N(self) -> np.ndarray:
        return self.Z

    @cached_property
    def _extended(self) -> tuple[np.ndarray, np.ndarray]:
        return extend(self.J1, self.J1_pinv, self.Z)

    @property
    def Je(self) -> np.ndarray:
        return self._extended[0]

    @property
    def Je_inv(self) -> np.ndarray:
        return self._extended[1]

    @property
    def m1(self) -> int:
        return self.J1.shape[0]

    @property
    def m2(self) -> int:
        return self.Z.shape[0]


def selection_matrix(rows, m: int) -> np.ndarray:
    """0/1 matrix picking the given rows out of an m-vector."""
    G = np.zeros((len(rows), m))
    for i, r in enumerate(rows):
        G[i, r] = 1.0
    return G


def translational_selection() -> np.ndarray:
    """G = [I3 0_3], the translation-only task selection."""
    return selection_matrix((0, 1, 2), 6)


def task_jacobian(J, G) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or J.ndim != 2 or G.shape[1] != J.shape[0]:
        raise ValueError(f"selection {G.shape} does not match Jacobian {J.shape}")
    if not np.all((G == 0.0) | (G == 1.0)) or not np.all(G.sum(axis=1) == 1.0):
        raise ValueError("selection matrix must hold exactly one 1 per row")
    if np.linalg.matrix_rank(G) != G.shape[0]:
        raise ValueError("selection matrix must have full row rank")
    return G @ J


def _svd_rank(s: np.ndarray, sigma_tol: float) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > sigma_tol * s[0]))


def pseudo_inverse(J1, sigma_tol: float = DEFAULT_SIGMA_TOL) -> tuple[np.ndarray, int]:
    """Moore-Penrose pseudo-inverse with relative singular-value truncation.

    Returns ``(J1_pinv, rank)``. A zero matrix yields a zero inverse and rank 0.
    """
    if sigma_tol <= 0:
        raise ValueError("sigma_tol must be positive")
    J1 = np.asarray(J1, dtype=float)
    U, s, Vt = np.linalg.svd(J1, full_matrices=False)
    r = _svd_rank(s, sigma_tol)
    if r == 0:
        return np.zeros((J1.shape[1], J1.shape[0])), 0
    return (Vt[:r].T / s[:r]) @ U[:, :r].T, r


def align_basis(Z_raw: np.ndarray, prev_Z: np.ndarray) -> np.ndarray:
    """Rotate ``Z_raw`` within its row space to best match ``prev_Z``.

    Solves the orthogonal Procrustes problem max trace(R Z_raw prev_Z^T).
    The kernel of a wide Jacobian has repeated zero singular values, so the
    SVD basis is arbitrary up to a full rotation, not only up to sign.
    """
    A = Z_raw @ prev_Z.T
    U, _, Vt = np.linalg.svd(A)
    return (Vt.T @ U.T) @ Z_raw


def null_space_basis(J1, sigma_tol: float = DEFAULT_SIGMA_TOL, prev_Z=None, m2=None):
    """Orthonormal basis (rows) of ker(J1), optionally aligned to ``prev_Z``."""
    J1 = np.asarray(J1, dtype=float)
    m1, n = J1.shape
    _, s, Vt = np.linalg.svd(J1, full_matrices=True)
    r = _svd_rank(s, sigma_tol)
    if m2 is None:
        m2 = n - m1
    smin = float(s[min(m1, n) - 1]) if s.size else 0.0
    if m2 > n - r:
        raise SingularityError(
            f"task Jacobian rank {r} leaves only {n - r} null directions, {m2} requested",
            smin,
        )
    Z = Vt[n - m2:]
    if prev_Z is not None:
        Z = align_basis(Z, np.asarray(prev_Z, dtype=float))
    return Z


def extend(J1, J1_pinv, Z) -> tuple[np.ndarray, np.ndarray]:
    """Extended Jacobian ``[J1; N]`` and its closed-form inverse ``[J1^+ | Z^T]``."""
    J1 = np.asarray(J1, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if J1_pinv.shape != (J1.shape[1], J1.shape[0]) or Z.shape[1] != J1.shape[1]:
        raise ValueError("inconsistent decomposition dimensions")
    # Z has orthonormal rows, so (Z Z^T)^-1 Z reduces to Z.
    N = Z
    return np.vstack((J1, N)), np.hstack((J1_pinv, Z.T))


# Fast path limits: the normal equations square the conditioning, so they
# are only trusted down to this singular-value ratio; the polar step needs
# the previous basis to overlap the new kernel by at least _MIN_OVERLAP.
_FAST_COND = 1e-5
_MIN_OVERLAP = 0.1


def _decompose_fast(J1, prev_Z, sigma_tol):
    # direct LAPACK calls: numpy.linalg wrappers dominate at these sizes
    lam, V, info = dsyevd(J1.dot(J1.T))
    if info != 0 or not lam[0] > max(_FAST_COND, sigma_tol) ** 2 * lam[-1]:
        return None
    J1_pinv = (J1.T.dot(V) / lam).dot(V.T)
    # polar factor of the projected previous basis = Procrustes-aligned kernel
    A = prev_Z - prev_Z.dot(J1_pinv).dot(J1)
    w, U, info = dsyevd(A.dot(A.T))
    if info != 0 or not w[0] > _MIN_OVERLAP**2:
        return None
    Z = (U / np.sqrt(w)).dot(U.T).dot(A)
    return TaskDecomposition(J1, J1_pinv, Z, J1.shape[0], math.sqrt(lam[0]), math.sqrt(lam[-1]))


def decompose(J1, sigma_tol: float = DEFAULT_SIGMA_TOL, prev_Z=None) -> TaskDecomposition:
    """Full decomposition of a task Jacobian; raises on rank loss.

    With a previous basis and a well-conditioned Jacobian, the pseudo-inverse
    comes from the normal equations and the aligned basis is the polar factor
    of the projected previous basis, which equals the Procrustes-aligned SVD
    kernel at a fraction of the cost. Otherwise the SVD route is used.
    """
    J1 = np.asarray(J1, dtype=float)
    m1, n = J1.shape
    if prev_Z is not None and 0 < m1 < n:
        fast = _decompose_fast(J1, prev_Z, sigma_tol)
        if fast is not None:
            return fast
    U, s, Vt = np.linalg.svd(J1, full_matrices=True)
    r = _svd_rank(s, sigma_tol)
    smax = float(s[0]) if s.size else 0.0
    smin = float(s[min(m1, n) - 1]) if s.size else 0.0
    if r < m1:
        raise SingularityError(
            f"task Jacobian is rank deficient (rank {r} < {m1}, sigma_min={smin:.3e})", smin
        )
    J1_pinv = (Vt[:m1].T / s[:m1]) @ U.T
    Z = Vt[m1:]
    if prev_Z is not None:
        Z = align_basis(Z, prev_Z)
    return TaskDecomposition(J1, J1_pinv, Z, r, smin, smax)


def compose_joint_velocity(dec: TaskDecomposition, x1dot, v2) -> np.ndarray:
    """q_dot = J1^+ x1_dot + Z^T v2."""
    x1dot = np.asarray(x1dot, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if x1dot.shape != (dec.m1,) or v2.shape != (dec.m2,):
        raise ValueError("velocity dimensions do not match the decomposition")
    return dec.J1_pinv @ x1dot + dec.Z.T @ v2
