"""Sparse direct solves with factorization bookkeeping.

The whole point of the blended-source formulation is to factorize one normal
operator per iteration and reuse it for every source, so every factorization
and every blocked solve goes through a :class:`SolverCounters` instance that
tests and the history log can inspect.
"""
from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SingularMatrixError",
    "RankDeficiencyWarning",
    "SolverCounters",
    "Factorization",
    "DEFAULT_COUNTERS",
    "factorize",
    "solve",
    "solve_multi",
    "dense_lstsq_oracle",
]

# Relative pivot size below which a successful LU is still declared singular.
PIVOT_TOLERANCE = 1e-14


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix is (numerically) singular.

    ``pivot`` is the column of the original matrix at which elimination broke
    down, when it can be located.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass
class SolverCounters:
    """Thread-safe tallies of factorizations and blocked solves."""

    factor_count: int = 0
    solve_count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump_factor(self):
        with self._lock:
            self.factor_count += 1

    def bump_solve(self):
        with self._lock:
            self.solve_count += 1

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.factor_count, self.solve_count

    def reset(self):
        with self._lock:
            self.factor_count = 0
            self.solve_count = 0


DEFAULT_COUNTERS = SolverCounters()


@dataclass(frozen=True, eq=False)
class Factorization:
    """LU factors of a sparse square matrix (SuperLU, COLAMD ordering)."""

    lu: spla.SuperLU
    n: int
    counters: SolverCounters
    dtype: np.dtype

    @property
    def perm_c(self) -> np.ndarray:
        return self.lu.perm_c

    @property
    def perm_r(self) -> np.ndarray:
        return self.lu.perm_r


def _locate_bad_pivot(matrix: sp.csc_matrix) -> int | None:
    """Find the elimination column that breaks down, using a shifted copy."""
    n = matrix.shape[0]
    scale = abs(matrix).max() or 1.0
    try:
        lu = spla.splu(matrix + 1e-10 * scale * sp.identity(n, format="csc"))
    except RuntimeError:
        return None
    diag = np.abs(lu.U.diagonal())
    return int(lu.perm_c[np.argmin(diag)])


def factorize(matrix, counters: SolverCounters | None = None) -> Factorization:
    """LU-factorize a square sparse matrix.

    Raises
    ------
    SingularMatrixError
        If the factorization hits a zero pivot or a pivot smaller than
        ``PIVOT_TOLERANCE`` times the largest one.
    """
    counters = DEFAULT_COUNTERS if counters is None else counters
    matrix = sp.csc_matrix(matrix)
    n, k = matrix.shape
    if n != k:
        raise ValueError(f"matrix must be square, got {matrix.shape}")
    dtype = np.result_type(matrix.dtype, np.float64)
    try:
        lu = spla.splu(matrix.astype(dtype))
    except RuntimeError as exc:
        pivot = _locate_bad_pivot(matrix.astype(dtype))
        raise SingularMatrixError(f"matrix is singular ({exc}); pivot column {pivot}",
                                  pivot) from exc
    diag = np.abs(lu.U.diagonal())
    if diag.size and diag.min() <= PIVOT_TOLERANCE * diag.max():
        j = int(np.argmin(diag))
        pivot = int(lu.perm_c[j])
        raise SingularMatrixError(f"matrix is numerically singular at pivot column {pivot}", pivot)
    counters.bump_factor()
    return Factorization(lu, n, counters, dtype)


def solve_multi(F: Factorization, B) -> np.ndarray:
    """Solve ``M X = B`` for a vector or an ``N x k`` block of right-hand sides."""
    B = np.asarray(B)
    if B.shape[0] != F.n:
        raise ValueError(f"right-hand side has {B.shape[0]} rows, factorization has {F.n}")
    dtype = np.result_type(F.dtype, B.dtype)
    F.counters.bump_solve()
    if B.size == 0:
        return np.zeros(B.shape, dtype=dtype)
    if np.iscomplexobj(B) and not np.issubdtype(F.dtype, np.complexfloating):
        return F.lu.solve(np.ascontiguousarray(B.real)) + 1j * F.lu.solve(
            np.ascontiguousarray(B.imag))
    return F.lu.solve(np.ascontiguousarray(B, dtype=dtype))


def solve(F: Factorization, b) -> np.ndarray:
    """Single right-hand side; counts as one blocked solve."""
    return solve_multi(F, b)


def dense_lstsq_oracle(A, b, rcond: float | None = None) -> np.ndarray:
    """Least-squares minimizer of ``||A x - b||`` by SVD.

    Rank deficiency triggers :class:`RankDeficiencyWarning` and the
    minimum-norm solution is returned.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    x, _, rank, _ = np.linalg.lstsq(A, b, rcond=rcond)
    if rank < A.shape[1]:
        warnings.warn(f"rank {rank} < {A.shape[1]} columns; returning minimum-norm solution",
                      RankDeficiencyWarning, stacklevel=2)
    return x
