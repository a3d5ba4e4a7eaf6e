"""Data-assimilated wavefield reconstruction (the U-subproblems).

Both reconstructions solve the normal equations of

    ||P U - D - D_hat||_F^2 + lam ||Q (A U - R)||_F^2

with ``Q = I - Phi Phi^T`` and ``R = B_hat`` for the blended update, and
``Q = I``, ``R = Phi S + B_hat`` for the localized one.  Each builds one
normal operator, factorizes it once and solves all sources as a block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .acquisition import AcquisitionGeometry
from .helmholtz import HelmholtzOperator

__all__ = [
    "DualState",
    "normal_operator",
    "reconstruct_blended",
    "reconstruct_localized",
]


@dataclass
class DualState:
    """Scaled multipliers: ``b_hat`` (N x n_s) for the wave equation, ``d_hat`` (M x n_s) for data."""

    b_hat: np.ndarray
    d_hat: np.ndarray

    @classmethod
    def zeros(cls, geometry: AcquisitionGeometry) -> DualState:
        ns = geometry.n_sources
        return cls(np.zeros((geometry.grid.n, ns), dtype=complex),
                   np.zeros((geometry.n_receivers, ns), dtype=complex))

    def copy(self) -> DualState:
        return DualState(self.b_hat.copy(), self.d_hat.copy())


# Relative diagonal shift applied to the blended operator when n_s > M, where
# it is singular; the shifted solve approaches the minimum-norm solution.
SINGULAR_SHIFT = 1e-10


def normal_operator(A: HelmholtzOperator, geometry: AcquisitionGeometry, lam: float,
                    q_diagonal: np.ndarray | None = None) -> sp.csc_matrix:
    """``P^T P + lam A^H Q A``; ``q_diagonal=None`` means Q = I.

    With the blended projector and more sources than receivers the operator
    has a null space (unit-source fields invisible at the receivers); a
    ``SINGULAR_SHIFT``-relative diagonal shift is then added.
    """
    if lam <= 0:
        raise ValueError("penalty lambda must be positive")
    M = A.matrix
    if q_diagonal is None:
        core = M.conj().T @ M
    else:
        core = M.conj().T @ sp.diags(q_diagonal) @ M
    ptp = np.zeros(geometry.grid.n)
    ptp[geometry.receiver_nodes] = 1.0
    N = sp.diags(ptp) + lam * core
    if q_diagonal is not None and geometry.n_sources > geometry.n_receivers and np.count_nonzero(
            q_diagonal == 0) > 1:
        N = N + SINGULAR_SHIFT * abs(N.diagonal()).max() * sp.identity(N.shape[0])
    return N.tocsc()


def _back_project(geometry: AcquisitionGeometry, R: np.ndarray) -> np.ndarray:
    """P^T R for an ``M x ...`` block."""
    out = np.zeros((geometry.grid.n,) + R.shape[1:], dtype=complex)
    out[geometry.receiver_nodes] = R
    return out


def _check_block(name, X, rows, cols):
    X = np.asarray(X)
    if X.shape[0] != rows or (cols is not None and X.shape[1] != cols):
        raise ValueError(f"{name} has shape {X.shape}, expected ({rows}, {cols})")
    return X


def reconstruct_blended(A: HelmholtzOperator, geometry: AcquisitionGeometry, D,
                        duals: DualState | None, lam: float,
                        counters: linsolve.SolverCounters | None = None) -> np.ndarray:
    """Blended-source U-update.

    Solves ``(P^T P + lam A^H Q A) U = P^T (D + D_hat) + lam A^H Q B_hat``.
    """
    D = _check_block("D", D, geometry.n_receivers, None)
    q = geometry.q_diagonal()
    rhs = _back_project(geometry, D)
    if duals is not None:
        rhs = rhs + _back_project(geometry, duals.d_hat)
        rhs = rhs + lam * (A.matrix.conj().T @ (q[:, None] * duals.b_hat))
    F = linsolve.factorize(normal_operator(A, geometry, lam, q), counters)
    return linsolve.solve_multi(F, rhs)


def reconstruct_localized(A: HelmholtzOperator, geometry: AcquisitionGeometry, D, S_diag,
                          duals: DualState | None, lam: float,
                          counters: linsolve.SolverCounters | None = None) -> np.ndarray:
    """U-update with the sources pinned at their physical positions.

    Solves ``(P^T P + lam A^H A) U = P^T (D + D_hat) + lam A^H (Phi S + B_hat)``;
    ``S_diag`` is an n_s x n_s diagonal matrix or a length-n_s vector.
    """
    D = _check_block("D", D, geometry.n_receivers, geometry.n_sources)
    S = np.asarray(S_diag)
    if S.ndim == 1:
        S = np.diag(S)
    if np.count_nonzero(S - np.diag(np.diag(S))):
        raise ValueError("localized reconstruction needs a diagonal signature matrix")
    source = geometry.inject(S)
    rhs = _back_project(geometry, D)
    if duals is not None:
        rhs = rhs + _back_project(geometry, duals.d_hat)
        source = source + duals.b_hat
    rhs = rhs + lam * (A.matrix.conj().T @ source)
    F = linsolve.factorize(normal_operator(A, geometry, lam), counters)
    return linsolve.solve_multi(F, rhs)
