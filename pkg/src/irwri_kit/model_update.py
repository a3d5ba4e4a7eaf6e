"""The model subproblem: Tikhonov-regularized least squares plus box projection.

Because A(m) u = Lap u + omega^2 W(u) m is affine in m, fitting the wave
equation for fixed wavefields is a linear least-squares problem in the
real vector m:

    min_m  gamma ||grad m||^2 + sum_f lam_f sum_i ||L_i m - y_i||^2,
    L_i = omega^2 W(u_i),   y_i = Phi s_i + b_hat_i - Lap u_i.

Its normal matrix is real symmetric; the minimizer is then clipped to the
bounds.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .acquisition import AcquisitionGeometry
from .grid_model import Grid2D, SquaredSlownessModel
from .helmholtz import HelmholtzOperator

__all__ = [
    "RegularizerConfig",
    "ModelTerm",
    "gradient_operator",
    "normal_system",
    "default_gamma",
    "update_model",
    "model_objective",
    "model_gradient",
    "pde_misfit",
]


@dataclass(frozen=True)
class RegularizerConfig:
    """First-order Tikhonov weight.

    ``gamma_tik=None`` picks ``gamma_scale`` times the weight that gives the
    smoothing and wave-equation blocks of the normal matrix equal trace.
    """

    gamma_tik: float | None = None
    gamma_scale: float = 1.0

    def __post_init__(self):
        if self.gamma_tik is not None and self.gamma_tik < 0:
            raise ValueError("gamma_tik must be >= 0")
        if self.gamma_scale < 0:
            raise ValueError("gamma_scale must be >= 0")


@dataclass(frozen=True, eq=False)
class ModelTerm:
    """Wave-equation fit for one frequency: operator, wavefields, signatures, duals."""

    A: HelmholtzOperator
    U: np.ndarray
    S_diag: np.ndarray
    B_hat: np.ndarray | None
    lam: float

    def signatures(self) -> np.ndarray:
        S = np.asarray(self.S_diag)
        return np.diag(S) if S.ndim == 2 else S


def gradient_operator(grid: Grid2D) -> sp.csr_matrix:
    """Stacked forward differences (x then z) over the padded grid."""
    nzt, nxt = grid.shape

    def diff(n, h):
        return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h

    gx = sp.kron(sp.identity(nzt), diff(nxt, grid.dx))
    gz = sp.kron(diff(nzt, grid.dz), sp.identity(nxt))
    return sp.vstack([gx, gz]).tocsr()


def _check_term(term: ModelTerm, geometry: AcquisitionGeometry):
    n, ns = geometry.grid.n, geometry.n_sources
    if term.U.shape != (n, ns):
        raise ValueError(f"wavefields have shape {term.U.shape}, expected {(n, ns)}")
    if term.B_hat is not None and term.B_hat.shape != (n, ns):
        raise ValueError("dual block has the wrong shape")
    if term.lam <= 0:
        raise ValueError("penalty lambda must be positive")


def _data_block(term: ModelTerm, geometry: AcquisitionGeometry):
    """``(sum_i L_i^H L_i, sum_i L_i^H y_i)``, accumulated in source order."""
    A = term.A
    w2 = A.omega**2
    rhs_src = geometry.inject(np.diag(term.signatures()))
    if term.B_hat is not None:
        rhs_src = rhs_src + term.B_hat
    Y = rhs_src - A.laplacian @ term.U
    H = None
    g = np.zeros(geometry.grid.n, dtype=complex)
    for i in range(geometry.n_sources):
        L = w2 * A.mass_jacobian(term.U[:, i])
        LH = L.conj().T
        H = LH @ L if H is None else H + LH @ L
        g += LH @ Y[:, i]
    return H, g


def normal_system(geometry: AcquisitionGeometry, terms: Sequence[ModelTerm]):
    """Real normal matrix and right-hand side of the wave-equation block.

    Returns ``(H, g)`` with ``H = Re sum lam L^H L`` and ``g = Re sum lam L^H y``.
    """
    H = None
    g = np.zeros(geometry.grid.n)
    for term in terms:
        _check_term(term, geometry)
        Hf, gf = _data_block(term, geometry)
        Hf = term.lam * Hf.real
        H = Hf if H is None else H + Hf
        g += term.lam * gf.real
    return H.tocsr(), g


def default_gamma(H: sp.spmatrix, grad: sp.spmatrix, scale: float = 1.0) -> float:
    """Weight giving ``gamma grad^T grad`` the same trace as ``H`` (times ``scale``)."""
    return scale * H.diagonal().sum() / (grad.T @ grad).diagonal().sum()


def update_model(m_prev: SquaredSlownessModel, geometry: AcquisitionGeometry,
                 terms: Sequence[ModelTerm], reg: RegularizerConfig = RegularizerConfig(),
                 return_gamma: bool = False):
    """Solve the regularized model subproblem and project onto the bounds.

    Contributions of all frequencies in ``terms`` are summed, so a
    multi-frequency batch updates one model.
    """
    if not terms:
        raise ValueError("need at least one frequency term")
    grid = m_prev.grid
    H, g = normal_system(geometry, terms)
    grad = gradient_operator(grid)
    gamma = reg.gamma_tik
    if gamma is None:
        gamma = default_gamma(H, grad, reg.gamma_scale)
    if gamma == 0:
        if H.diagonal().min() <= 0:
            node = int(np.argmin(H.diagonal()))
            raise ValueError(f"no wavefield energy at node {node}; use a Tikhonov weight > 0")
        if H.nnz == np.count_nonzero(H.diagonal()):
            m = g / H.diagonal()
        else:
            m = spla.spsolve(H.tocsc(), g)
    else:
        m = spla.spsolve((H + gamma * (grad.T @ grad)).tocsc(), g)
    new = m_prev.project(np.real(m))
    return (new, gamma) if return_gamma else new


def model_objective(m: np.ndarray, geometry: AcquisitionGeometry, terms: Sequence[ModelTerm],
                    gamma: float = 0.0) -> float:
    """``gamma ||grad m||^2 + sum lam ||A(m) U - Phi S - B_hat||_F^2`` for a raw vector m."""
    m = np.asarray(m, dtype=float)
    grid = geometry.grid
    total = gamma * float(np.sum((gradient_operator(grid) @ m) ** 2))
    for term in terms:
        A = term.A
        R = A.laplacian @ term.U + A.omega**2 * np.column_stack(
            [A.mass_jacobian(term.U[:, i]) @ m for i in range(term.U.shape[1])])
        R = R - geometry.inject(np.diag(term.signatures()))
        if term.B_hat is not None:
            R = R - term.B_hat
        total += term.lam * float(np.sum(np.abs(R) ** 2))
    return total


def model_gradient(m: np.ndarray, geometry: AcquisitionGeometry, terms: Sequence[ModelTerm],
                   gamma: float = 0.0) -> np.ndarray:
    """Gradient of :func:`model_objective`: ``2 (H m - g + gamma grad^T grad m)``."""
    m = np.asarray(m, dtype=float)
    H, g = normal_system(geometry, terms)
    grad = gradient_operator(geometry.grid)
    return 2 * (H @ m - g + gamma * (grad.T @ (grad @ m)))


def pde_misfit(A: HelmholtzOperator, U: np.ndarray, S_diag,
               geometry: AcquisitionGeometry) -> float:
    """``||A U - Phi S||_F`` for the operator already assembled at the model of interest."""
    S = np.asarray(S_diag)
    if S.ndim == 1:
        S = np.diag(S)
    return float(np.linalg.norm(A.matrix @ U - geometry.inject(S)))
