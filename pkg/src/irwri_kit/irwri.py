"""IR-WRI outer loop: ADMM over wavefields/signatures, model and duals.

Four variants share one iteration skeleton and differ only in how the
wavefields and signatures are produced:

``known_source``
    localized reconstruction with the true signatures (1 factorization).
``separate``
    per-source variable projection (n_s factorizations).
``alg1``
    blended reconstruction, then keep the diagonal of ``Phi^T A U``
    (1 factorization).
``alg2``
    as ``alg1``, followed by a localized reconstruction with that diagonal
    (2 factorizations).

A batch of frequencies shares one model update; wavefields, signatures and
duals are kept per frequency.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import linsolve
from .acquisition import AcquisitionGeometry, DataMatrix
from .grid_model import SquaredSlownessModel
from .helmholtz import FIVE_POINT, HelmholtzOperator, assemble
from .metrics import model_re
from .model_update import ModelTerm, RegularizerConfig, update_model
from .source_estimation import default_lambda, estimate_separate
from .wavefield_recon import DualState, reconstruct_blended, reconstruct_localized

__all__ = [
    "ALGORITHMS",
    "DivergenceError",
    "InversionConfig",
    "HistoryRecord",
    "IrwriState",
    "InversionResult",
    "frequency_schedule",
    "init_state",
    "iterate_batch",
    "iterate_alg1",
    "iterate_alg2",
    "iterate_known_source",
    "iterate_separate",
    "run_inversion",
    "write_history",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("known_source", "separate", "alg1", "alg2")
HISTORY_COLUMNS = ("path", "batch", "freqs_hz", "iteration", "pde_misfit", "data_misfit",
                   "model_re", "factor_count", "solve_count", "wall_ms")


class DivergenceError(RuntimeError):
    """Data misfit blew up; ``state`` holds the last good iterate."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


def frequency_schedule(paths, step: float = 0.5, batch_size: int = 1, overlap: int = 0):
    """Frequency batches for each ``(start, end)`` path, in Hz.

    With ``batch_size=2, overlap=1`` consecutive batches share one frequency.
    """
    if batch_size < 1 or not 0 <= overlap < batch_size:
        raise ValueError("need batch_size >= 1 and 0 <= overlap < batch_size")
    schedule = []
    for start, end in paths:
        freqs = np.round(np.arange(start, end + step / 2, step), 10).tolist()
        batches = []
        i = 0
        while True:
            batches.append(freqs[i:i + batch_size])
            if i + batch_size >= len(freqs):
                break
            i += batch_size - overlap
        schedule.append(batches)
    return schedule


@dataclass(frozen=True)
class InversionConfig:
    algorithm: str = "alg2"
    schedule: tuple = ()
    max_iterations: int = 15
    min_relative_drop: float = 1e-3
    lam: float | None = None
    lambda_scale: float = 0.1
    regularizer: RegularizerConfig = RegularizerConfig()
    stencil_kind: str = FIVE_POINT
    carry_duals: bool = False
    subtract_dual_in_signature: bool = False
    divergence_factor: float = 1e3

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected {ALGORITHMS}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.divergence_factor >= 1:
            raise ValueError("divergence_factor must be >= 1")
        for path in self.schedule:
            flat = [f for batch in path for f in batch]
            if any(f <= 0 for f in flat):
                raise ValueError("frequencies must be positive")
            firsts = [batch[0] for batch in path]
            if any(b < a for a, b in zip(firsts, firsts[1:])):
                raise ValueError("frequencies must not decrease within a path")

    def frequencies(self) -> list[float]:
        return sorted({f for path in self.schedule for batch in path for f in batch})


@dataclass(frozen=True)
class HistoryRecord:
    path: int
    batch: int
    freqs_hz: tuple
    iteration: int
    pde_misfit: float
    data_misfit: float
    model_re: float
    factor_count: int
    solve_count: int
    wall_ms: float

    def row(self):
        return [self.path, self.batch, " ".join(f"{f:g}" for f in self.freqs_hz),
                self.iteration, self.pde_misfit, self.data_misfit, self.model_re,
                self.factor_count, self.solve_count, round(self.wall_ms, 3)]


@dataclass
class IrwriState:
    """Everything carried between iterations.

    ``duals``, ``signatures`` and ``wavefields`` are keyed by frequency (Hz).
    ``source_residuals`` / ``data_residuals`` hold the constraint violations
    added to the duals at the last iteration.
    """

    m: SquaredSlownessModel
    geometry: AcquisitionGeometry
    pml_velocity: float
    duals: dict = field(default_factory=dict)
    signatures: dict = field(default_factory=dict)
    wavefields: dict = field(default_factory=dict)
    source_residuals: dict = field(default_factory=dict)
    data_residuals: dict = field(default_factory=dict)
    iteration: int = 0
    counters: linsolve.SolverCounters = field(default_factory=linsolve.SolverCounters)

    def dual(self, freq: float) -> DualState:
        if freq not in self.duals:
            self.duals[freq] = DualState.zeros(self.geometry)
        return self.duals[freq]


def init_state(m0: SquaredSlownessModel, geometry: AcquisitionGeometry,
               pml_velocity: float | None = None,
               counters: linsolve.SolverCounters | None = None) -> IrwriState:
    """Fresh state with zero duals; the PML reference speed is frozen here."""
    if pml_velocity is None:
        pml_velocity = float(1.0 / np.sqrt(m0.values.min()))
    return IrwriState(m0, geometry, pml_velocity,
                      counters=linsolve.SolverCounters() if counters is None else counters)


def _values(D) -> np.ndarray:
    return np.asarray(D.values if isinstance(D, DataMatrix) else D)


def _primal_step(algorithm, A, geometry, D, duals, lam, counters, S_true=None,
                 subtract_dual=False):
    """Wavefield and diagonal-signature update for one frequency."""
    if algorithm == "known_source":
        if S_true is None:
            raise ValueError("known_source needs the true signatures")
        S = np.diag(np.diag(S_true)) if np.ndim(S_true) == 2 else np.diag(S_true)
        U = reconstruct_localized(A, geometry, D, S, duals, lam, counters)
        return U, S
    if algorithm == "separate":
        U, sig = estimate_separate(A, geometry, D, lam, duals, counters)
        return U, sig.S
    U = reconstruct_blended(A, geometry, D, duals, lam, counters)
    AU = A.matrix @ U
    if subtract_dual:
        AU = AU - duals.b_hat
    S = np.diag(np.diag(AU[geometry.source_nodes]))
    if algorithm == "alg2":
        U = reconstruct_localized(A, geometry, D, S, duals, lam, counters)
    return U, S


def iterate_batch(state: IrwriState, operators: Mapping[float, HelmholtzOperator],
                  data: Mapping[float, object], lams: Mapping[float, float],
                  config: InversionConfig, true_signatures: Mapping[float, object] | None = None):
    """One ADMM iteration over a frequency batch.

    Returns ``(new_state, diagnostics)`` where diagnostics has the summed
    ``pde_misfit`` and ``data_misfit`` and the factorizations/solves used.
    """
    geometry = state.geometry
    f0, s0 = state.counters.snapshot()
    duals = {f: state.dual(f).copy() for f in operators}
    terms = []
    updates = {}
    for f, A in operators.items():
        D = _values(data[f])
        S_true = None if true_signatures is None else true_signatures.get(f)
        U, S = _primal_step(config.algorithm, A, geometry, D, duals[f], lams[f], state.counters,
                            S_true, config.subtract_dual_in_signature)
        updates[f] = (U, S)
        terms.append(ModelTerm(A, U, S, duals[f].b_hat, lams[f]))
    m_new = update_model(state.m, geometry, terms, config.regularizer)

    pde2 = data2 = 0.0
    new_duals, src_res, dat_res = {}, {}, {}
    for f, A in operators.items():
        U, S = updates[f]
        A_new = A.with_model(m_new)
        r_src = geometry.inject(S) - A_new.matrix @ U
        r_dat = _values(data[f]) - geometry.sample(U)
        new_duals[f] = DualState(duals[f].b_hat + r_src, duals[f].d_hat + r_dat)
        src_res[f], dat_res[f] = r_src, r_dat
        pde2 += float(np.sum(np.abs(r_src) ** 2))
        data2 += float(np.sum(np.abs(r_dat) ** 2))
    f1, s1 = state.counters.snapshot()
    new_state = replace(
        state, m=m_new,
        duals={**state.duals, **new_duals},
        signatures={**state.signatures, **{f: updates[f][1] for f in operators}},
        wavefields={**state.wavefields, **{f: updates[f][0] for f in operators}},
        source_residuals=src_res, data_residuals=dat_res,
        iteration=state.iteration + 1)
    return new_state, {"pde_misfit": np.sqrt(pde2), "data_misfit": np.sqrt(data2),
                       "factor_count": f1 - f0, "solve_count": s1 - s0}


def _single(state, A_k, D, lam, config, S_true=None):
    f = A_k.omega / (2 * np.pi)
    truth = None if S_true is None else {f: S_true}
    new, _ = iterate_batch(state, {f: A_k}, {f: D}, {f: lam}, config, truth)
    return new


def iterate_alg1(state: IrwriState, A_k: HelmholtzOperator, D, lam: float,
                 config: InversionConfig | None = None) -> IrwriState:
    """Blended U-update, diagonal S, model update, dual ascent (1 factorization)."""
    config = replace(config or InversionConfig(), algorithm="alg1")
    return _single(state, A_k, D, lam, config)


def iterate_alg2(state: IrwriState, A_k: HelmholtzOperator, D, lam: float,
                 config: InversionConfig | None = None) -> IrwriState:
    """Algorithm 1 plus a localized wavefield re-estimate (2 factorizations)."""
    config = replace(config or InversionConfig(), algorithm="alg2")
    return _single(state, A_k, D, lam, config)


def iterate_known_source(state: IrwriState, A_k: HelmholtzOperator, D, S_true, lam: float,
                         config: InversionConfig | None = None) -> IrwriState:
    config = replace(config or InversionConfig(), algorithm="known_source")
    return _single(state, A_k, D, lam, config, S_true)


def iterate_separate(state: IrwriState, A_k: HelmholtzOperator, D, lam: float,
                     config: InversionConfig | None = None) -> IrwriState:
    config = replace(config or InversionConfig(), algorithm="separate")
    return _single(state, A_k, D, lam, config)


@dataclass
class InversionResult:
    model: SquaredSlownessModel
    history: list
    counters: linsolve.SolverCounters
    snapshots: list
    state: IrwriState


def run_inversion(config: InversionConfig, data: Mapping[float, object],
                  m0: SquaredSlownessModel, geometry: AcquisitionGeometry,
                  true_signatures: Mapping[float, object] | None = None,
                  m_true: SquaredSlownessModel | None = None,
                  pml_velocity: float | None = None) -> InversionResult:
    """Frequency continuation over ``config.schedule`` (paths of batches).

    ``data`` maps frequency (Hz) to a DataMatrix or an M x n_s array.
    ``snapshots`` holds ``(path, batch, model)`` after every batch.
    """
    missing = [f for f in config.frequencies() if f not in data]
    if missing:
        raise KeyError(f"no data for frequencies {missing}")
    if config.algorithm == "known_source":
        if true_signatures is None or any(f not in true_signatures
                                          for f in config.frequencies()):
            raise KeyError("known_source needs true signatures for every frequency")
    state = init_state(m0, geometry, pml_velocity)
    history, snapshots = [], []
    for ip, path in enumerate(config.schedule):
        for ib, batch in enumerate(path):
            if not config.carry_duals:
                state.duals = {}
            operators = {f: assemble(state.m, 2 * np.pi * f, config.stencil_kind,
                                     state.pml_velocity) for f in batch}
            lams = {f: config.lam if config.lam is not None
                    else default_lambda(A, geometry, config.lambda_scale)
                    for f, A in operators.items()}
            first_misfit = prev_misfit = None
            for it in range(config.max_iterations):
                t0 = time.perf_counter()
                try:
                    new_state, diag = iterate_batch(state, operators, data, lams, config,
                                                    true_signatures)
                except linsolve.SingularMatrixError as exc:
                    raise DivergenceError(f"path {ip} batch {ib} iteration {it}: {exc}",
                                          state) from exc
                misfit = diag["data_misfit"]
                if first_misfit is None:
                    first_misfit = misfit
                if not np.isfinite(misfit) or misfit > config.divergence_factor * first_misfit:
                    raise DivergenceError(
                        f"path {ip} batch {ib} iteration {it}: data misfit {misfit:.3e} "
                        f"exceeds {config.divergence_factor:g} x initial {first_misfit:.3e}",
                        state)
                state = new_state
                rec = HistoryRecord(ip, ib, tuple(batch), it, diag["pde_misfit"], misfit,
                                    model_re(m_true, state.m) if m_true is not None else float("nan"),
                                    diag["factor_count"], diag["solve_count"],
                                    1e3 * (time.perf_counter() - t0))
                history.append(rec)
                log.debug("path %d batch %s it %d: data %.3e pde %.3e re %.4f", ip, batch, it,
                          misfit, rec.pde_misfit, rec.model_re)
                if prev_misfit is not None and prev_misfit > 0 and \
                        abs(prev_misfit - misfit) / prev_misfit < config.min_relative_drop:
                    break
                prev_misfit = misfit
                operators = {f: A.with_model(state.m) for f, A in operators.items()}
            snapshots.append((ip, ib, state.m))
    return InversionResult(state.m, history, state.counters, snapshots, state)


def write_history(path, history: Sequence[HistoryRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "batch", "freqs_hz", "iteration", "pde_misfit", "data_misfit",
                    "model_re", "factor_count", "solve_count", "wall_ms"])
        for rec in history:
            w.writerow(rec.row())
