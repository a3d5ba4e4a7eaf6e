"""Source-signature estimators: conventional, separate and joint (blended).

The data block ``D`` may carry a trailing batch axis, ``(M, n_s, k)``, to
estimate from ``k`` datasets that share one model and geometry (different
noise draws, say) without refactorizing.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import linsolve
from .acquisition import AcquisitionGeometry
from .helmholtz import HelmholtzOperator
from .wavefield_recon import _back_project, normal_operator

__all__ = [
    "SignatureMatrix",
    "UnderdeterminedWarning",
    "default_lambda",
    "estimate_conventional",
    "conventional_per_source",
    "estimate_separate",
    "estimate_joint",
    "extract_diagonal",
    "offdiagonal_ratio",
    "write_signature_csv",
]

CONVENTIONAL = "conventional"
SEPARATE = "separate"
JOINT_FULL = "joint_full"
JOINT_DIAG = "joint_diag"


class UnderdeterminedWarning(UserWarning):
    """More sources than receivers: the blended estimate is minimum-norm only."""


@dataclass(frozen=True, eq=False)
class SignatureMatrix:
    """Estimated signatures ``S`` (n_s x n_s, optionally with a batch axis) and how they were made."""

    S: np.ndarray
    kind: str

    @property
    def signatures(self) -> np.ndarray:
        """Diagonal of S (length n_s, or n_s x k for batched estimates)."""
        return np.diagonal(self.S, axis1=0, axis2=1).T if self.S.ndim == 3 else np.diag(self.S)


def default_lambda(A: HelmholtzOperator, geometry: AcquisitionGeometry, scale: float = 0.1,
                   iterations: int = 20) -> float:
    """Penalty balancing the data term against the wave-equation term.

    ``lam = scale / rho`` where ``rho`` is a 20-step power-iteration
    estimate of the largest eigenvalue of ``A^H Q A``; the data term
    ``P^T P`` has unit norm, so ``scale`` is the ratio of the two terms at the
    top of the spectrum.
    """
    M = A.matrix
    q = geometry.q_diagonal()
    op = spla.LinearOperator(M.shape, matvec=lambda x: M.conj().T @ (q * (M @ x)),
                             dtype=complex)
    x = np.ones(M.shape[0], dtype=complex)
    rho = 0.0
    for _ in range(iterations):
        y = op.matvec(x)
        rho = float(np.linalg.norm(y))
        x = y / rho
    return scale / rho


def _check_data(geometry: AcquisitionGeometry, D) -> np.ndarray:
    D = np.asarray(D)
    if D.ndim not in (2, 3) or D.shape[:2] != (geometry.n_receivers, geometry.n_sources):
        raise ValueError(f"data has shape {D.shape}, expected "
                         f"({geometry.n_receivers}, {geometry.n_sources}[, k])")
    return D


def _unit_source_data(A, geometry, counters):
    F = linsolve.factorize(A.matrix, counters)
    return geometry.sample(linsolve.solve_multi(F, geometry.inject(np.eye(geometry.n_sources))))


def estimate_conventional(A: HelmholtzOperator, geometry: AcquisitionGeometry, D,
                          counters: linsolve.SolverCounters | None = None) -> SignatureMatrix:
    """Least-squares deconvolution of the data by the modelled Green's functions.

    With ``G_hat = P A^-1 Phi`` the diagonal S minimizing
    ``sum_i ||G_hat[:, i] s_i - d_i||^2`` is
    ``diag(G_hat^H D) / diag(G_hat^H G_hat)``.
    """
    D = _check_data(geometry, D)
    G = _unit_source_data(A, geometry, counters)
    return _conventional_from_green(G, D)


def _conventional_from_green(G, D):
    gram = np.real(np.einsum("mi,mi->i", G.conj(), G))
    zero = np.flatnonzero(gram == 0)
    if zero.size:
        raise ZeroDivisionError(f"predicted data vanish for source {int(zero[0])}")
    cross = np.diagonal(np.tensordot(G.conj(), D, axes=(0, 0)), axis1=0, axis2=1)
    s = (cross.T if D.ndim == 3 else cross) / (gram if D.ndim == 2 else gram[:, None])
    return SignatureMatrix(_diag_embed(s), CONVENTIONAL)


def conventional_per_source(A: HelmholtzOperator, geometry: AcquisitionGeometry, D,
                            counters: linsolve.SolverCounters | None = None) -> np.ndarray:
    """Scalar form ``s_i = <g_i, d_i> / <g_i, g_i>``, one source at a time."""
    D = _check_data(geometry, D)
    F = linsolve.factorize(A.matrix, counters)
    out = np.empty(geometry.n_sources, dtype=complex)
    for i, node in enumerate(geometry.source_nodes):
        e = np.zeros(geometry.grid.n)
        e[node] = 1.0
        g = geometry.sample(linsolve.solve(F, e))
        out[i] = np.vdot(g, D[:, i]) / np.vdot(g, g)
    return out


def _diag_embed(s: np.ndarray) -> np.ndarray:
    """Length-n_s (or n_s x k) signatures -> n_s x n_s (x k) diagonal matrices."""
    if s.ndim == 1:
        return np.diag(s)
    ns, k = s.shape
    out = np.zeros((ns, ns, k), dtype=s.dtype)
    out[np.arange(ns), np.arange(ns)] = s
    return out


def estimate_separate(A: HelmholtzOperator, geometry: AcquisitionGeometry, D, lam: float,
                      duals=None, counters: linsolve.SolverCounters | None = None):
    """Per-source variable projection; one factorization per source.

    For source i, ``u_i = (P^T P + lam A^H Q_i A)^-1 (P^T (d_i + d_hat_i)
    + lam A^H Q_i b_hat_i)`` and ``s_i = phi_i^T (A u_i - b_hat_i)``.
    Without duals this is the closed-form wavefield and signature of the
    single-source extended problem.

    Returns ``(U, SignatureMatrix)``.
    """
    D = _check_data(geometry, D)
    ns = geometry.n_sources
    batch = D.shape[2:]
    U = np.zeros((geometry.grid.n, ns) + batch, dtype=complex)
    s = np.zeros((ns,) + batch, dtype=complex)
    AH = A.matrix.conj().T
    for i in range(ns):
        q = geometry.q_diagonal(i)
        rhs = _back_project(geometry, D[:, i])
        b_hat = None
        if duals is not None:
            b_hat = duals.b_hat[:, i]
            rhs = rhs + _back_project(geometry, duals.d_hat[:, i]) + lam * (AH @ (q * b_hat))
        try:
            F = linsolve.factorize(normal_operator(A, geometry, lam, q), counters)
        except linsolve.SingularMatrixError as exc:
            raise linsolve.SingularMatrixError(f"source {i}: {exc}", exc.pivot) from exc
        U[:, i] = linsolve.solve_multi(F, rhs)
        Au = A.matrix @ U[:, i]
        node = geometry.source_nodes[i]
        s[i] = Au[node] - (0 if b_hat is None else b_hat[node])
    return U, SignatureMatrix(_diag_embed(s), SEPARATE)


def estimate_joint(A: HelmholtzOperator, geometry: AcquisitionGeometry, D, lam: float,
                   counters: linsolve.SolverCounters | None = None):
    """Blended-source variable projection with a single factorization.

    ``U = (P^T P + lam A^H Q A)^-1 P^T D`` and ``S_full = Phi^T A U``, which
    is dense when the model is wrong.  Returns ``(U, SignatureMatrix)``.
    """
    D = _check_data(geometry, D)
    if geometry.n_sources > geometry.n_receivers:
        warnings.warn(f"{geometry.n_sources} sources > {geometry.n_receivers} receivers: "
                      "blended signature problem is under-determined", UnderdeterminedWarning,
                      stacklevel=2)
    ns = geometry.n_sources
    flat = D.reshape(D.shape[0], -1)
    F = linsolve.factorize(normal_operator(A, geometry, lam, geometry.q_diagonal()), counters)
    U = linsolve.solve_multi(F, _back_project(geometry, flat))
    S = (A.matrix @ U)[geometry.source_nodes]
    return U.reshape((geometry.grid.n,) + D.shape[1:]), SignatureMatrix(
        S.reshape((ns,) + D.shape[1:]), JOINT_FULL)


def extract_diagonal(S_full) -> SignatureMatrix:
    """Keep the physical-source (diagonal) part of a blended signature matrix."""
    S = S_full.S if isinstance(S_full, SignatureMatrix) else np.asarray(S_full)
    if S.shape[0] != S.shape[1]:
        raise ValueError("signature matrix must be square")
    return SignatureMatrix(_diag_embed(np.diagonal(S, axis1=0, axis2=1).T
                                       if S.ndim == 3 else np.diag(S)), JOINT_DIAG)


def offdiagonal_ratio(S_full) -> float:
    """``max |off-diagonal| / max |diagonal|`` of a square signature matrix."""
    S = S_full.S if isinstance(S_full, SignatureMatrix) else np.asarray(S_full)
    diag = np.abs(np.diag(S))
    off = np.abs(S - np.diag(np.diag(S)))
    return float(off.max() / diag.max())


def write_signature_csv(path, frequencies, signatures: dict[str, np.ndarray]) -> None:
    """One row per (method, frequency, source): Re, Im, modulus and unwrapped phase.

    ``signatures[method]`` is an ``n_freq x n_s`` complex array; phase is
    unwrapped along frequency for each source.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "frequency_hz", "source", "re_s", "im_s", "abs_s",
                    "phase_unwrapped_rad"])
        for method, s in signatures.items():
            s = np.asarray(s)
            phase = np.unwrap(np.angle(s), axis=0)
            for fi, f in enumerate(frequencies):
                for i in range(s.shape[1]):
                    v = s[fi, i]
                    w.writerow([method, f, i, v.real, v.imag, abs(v), phase[fi, i]])
