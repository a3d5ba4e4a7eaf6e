"""Desk-scale synthetic cases and parameter sweeps.

The models are small analogues of layered, faulted sediments (``marmousi``)
and of a high-velocity body in a gradient (``salt``).  Each carries a
water layer of known velocity, which is reset in every starting model so
that only the sub-seafloor part is uncertain.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import linsolve
from .acquisition import (AcquisitionGeometry, DataMatrix, SignatureSet, add_noise, line_geometry,
                          random_signatures, synthesize_data)
from .grid_model import Grid2D, SquaredSlownessModel, smooth_model, velocity_to_squared_slowness
from .helmholtz import FIVE_POINT, assemble
from .metrics import mean_re, signature_re
from .source_estimation import (default_lambda, estimate_conventional, estimate_joint,
                                estimate_separate)

__all__ = [
    "DeskCase",
    "marmousi_velocity",
    "salt_velocity",
    "desk_case",
    "starting_model",
    "observed_data",
    "SignatureTrial",
    "signature_trial",
    "SWEEP_AXES",
    "SweepCell",
    "sweep",
]

log = logging.getLogger(__name__)

WATER_VELOCITY = 1500.0
METHODS = ("conventional", "separate", "joint")


def marmousi_velocity(nx: int = 80, nz: int = 40, h: float = 25.0,
                      water_rows: int = 6) -> np.ndarray:
    """Layered gradient with a dipping sinuous interface and two lenses (m/s)."""
    z = np.arange(nz)[:, None] * h
    x = np.arange(nx)[None, :] * h
    lx, lz = nx * h, nz * h
    v = 1500.0 + 1.0 * z + 0.0 * x
    v = v + 400.0 * (z > 0.5 * lz + 0.05 * lz * np.sin(2 * np.pi * x / (0.47 * lx)) + 0.1 * (x - lx / 2) * lz / lx)
    v = v - 350.0 * np.exp(-((x - 0.6 * lx) ** 2 + (z - 0.35 * lz) ** 2) / (2 * (0.15 * lz) ** 2))
    v = v + 300.0 * np.exp(-((x - 0.3 * lx) ** 2 + (z - 0.7 * lz) ** 2) / (2 * (0.12 * lz) ** 2))
    v[:water_rows] = WATER_VELOCITY
    return v


def salt_velocity(nx: int = 80, nz: int = 40, h: float = 25.0,
                  water_rows: int = 6) -> np.ndarray:
    """Linear gradient with an elliptical 4500 m/s body (m/s)."""
    z = np.arange(nz)[:, None] * h
    x = np.arange(nx)[None, :] * h
    lx, lz = nx * h, nz * h
    v = 1600.0 + 0.9 * z + 0.0 * x
    body = ((x - 0.5 * lx) / (0.2 * lx)) ** 2 + ((z - 0.45 * lz) / (0.15 * lz)) ** 2 < 1
    v[body] = 4500.0
    v[:water_rows] = WATER_VELOCITY
    return v


MODELS: dict[str, Callable[..., np.ndarray]] = {"marmousi": marmousi_velocity,
                                                 "salt": salt_velocity}


@dataclass(frozen=True, eq=False)
class DeskCase:
    """True model, geometry and signatures of one synthetic experiment."""

    m_true: SquaredSlownessModel
    geometry: AcquisitionGeometry
    signatures: SignatureSet
    water_rows: int
    pml_velocity: float

    @property
    def grid(self) -> Grid2D:
        return self.m_true.grid


def desk_case(model: str = "marmousi", nx: int = 80, nz: int = 40, h: float = 25.0,
              npml: int = 10, n_sources: int = 8, n_receivers: int = 20,
              source_depth: int = 3, water_rows: int = 6, seed: int = 0,
              velocity: np.ndarray | None = None) -> DeskCase:
    """Build a free-surface desk case with sources and receivers along lines.

    ``velocity`` (physical ``(nz, nx)``, m/s) replaces the named generator.
    """
    if velocity is None:
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}; expected one of {sorted(MODELS)}")
        v = MODELS[model](nx, nz, h, water_rows)
    else:
        v = np.asarray(velocity, dtype=float)
        if v.shape != (nz, nx):
            raise ValueError(f"velocity has shape {v.shape}, expected {(nz, nx)}")
    grid = Grid2D(nx, nz, h, h, npml=npml, free_surface_top=True)
    m_true = _pin_water(velocity_to_squared_slowness(v, grid), water_rows)
    geometry = line_geometry(grid, n_sources, n_receivers, source_depth=source_depth,
                             receiver_depth=0)
    return DeskCase(m_true, geometry, random_signatures(n_sources, seed), water_rows,
                    float(v.max()))


def _pin_water(m: SquaredSlownessModel, water_rows: int) -> SquaredSlownessModel:
    """Collapse the bounds of the water rows onto the water value, so the
    projection step of every model update keeps the water layer fixed."""
    g = m.grid
    lo = m.m_min.reshape(g.shape).copy()
    hi = m.m_max.reshape(g.shape).copy()
    rows = slice(g.pad_top, g.pad_top + water_rows)
    lo[rows] = hi[rows] = 1.0 / WATER_VELOCITY**2
    return SquaredSlownessModel(g, m.values, lo.ravel(), hi.ravel())


def starting_model(case: DeskCase, radius: float | None = None,
                   gradient: float | None = None) -> SquaredSlownessModel:
    """Smoothed true model (``radius`` in m) or a 1D gradient below the water.

    The water layer is restored after smoothing.
    """
    m_true = case.m_true
    g = case.grid
    if (radius is None) == (gradient is None):
        raise ValueError("give exactly one of radius or gradient")
    if radius is not None:
        v = smooth_model(m_true, radius).velocity()
    else:
        z = np.arange(g.nz)[:, None] * g.dz
        wb = case.water_rows * g.dz
        v = np.broadcast_to(WATER_VELOCITY + gradient * np.maximum(z - wb, 0.0),
                            (g.nz, g.nx)).copy()
    v[:case.water_rows] = WATER_VELOCITY
    return m_true.with_values(velocity_to_squared_slowness(v, g, bounds=None).values)


def observed_data(case: DeskCase, frequencies: Sequence[float],
                  stencil_kind: str = FIVE_POINT,
                  counters: linsolve.SolverCounters | None = None) -> dict:
    """Noise-free data, keyed by frequency in Hz."""
    return {f: synthesize_data(case.m_true, case.geometry, case.signatures.at(f), 2 * np.pi * f,
                               stencil_kind, case.pml_velocity, counters).values
            for f in frequencies}


@dataclass(frozen=True)
class SignatureTrial:
    """Per-method RE arrays of shape ``(n_seeds, n_s)``."""

    re: dict
    offdiag_max: float


def signature_trial(case: DeskCase, m_start: SquaredSlownessModel, frequencies: Sequence[float],
                    snr_db: float | None = None, seeds: Sequence[int] = (0,),
                    lambda_scale: float = 0.1, methods: Sequence[str] = METHODS,
                    stencil_kind: str = FIVE_POINT) -> SignatureTrial:
    """Estimate signatures in ``m_start`` from (noisy) data for several noise seeds.

    Signatures are redrawn per seed; the noise draws are stacked on a batch
    axis so each method factorizes once per frequency regardless of the seed
    count.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    geometry = case.geometry
    ns = geometry.n_sources
    sigsets = [random_signatures(ns, seed) for seed in seeds]
    est = {k: [] for k in methods}
    truth = []
    offdiag = 0.0
    for f in frequencies:
        omega = 2 * np.pi * f
        # data are linear in the signatures: one unit-source solve serves every seed
        G = synthesize_data(case.m_true, geometry, np.ones(ns), omega, stencil_kind,
                            case.pml_velocity).values
        S = np.stack([s.at(f) for s in sigsets], axis=-1)
        truth.append(S)
        D = G[:, :, None] * S[None, :, :]
        if snr_db is not None:
            D = np.stack([add_noise(DataMatrix(D[:, :, k], f), snr_db,
                                    seed=(int(seed), int(round(f * 1000)))).values
                          for k, seed in enumerate(seeds)], axis=-1)
        A = assemble(m_start, omega, stencil_kind, case.pml_velocity)
        lam = default_lambda(A, geometry, lambda_scale)
        if "conventional" in methods:
            est["conventional"].append(estimate_conventional(A, geometry, D).signatures)
        if "separate" in methods:
            est["separate"].append(estimate_separate(A, geometry, D, lam)[1].signatures)
        if "joint" in methods:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                _, Sj = estimate_joint(A, geometry, D, lam)
            diag = np.diagonal(Sj.S, axis1=0, axis2=1).T
            est["joint"].append(diag)
            for k in range(len(seeds)):
                Sk = Sj.S[:, :, k]
                off = np.abs(Sk - np.diag(np.diag(Sk))).max() / np.abs(np.diag(Sk)).max()
                offdiag = max(offdiag, float(off))
    truth = np.array(truth)  # (nf, ns, k)
    re = {}
    for k, vals in est.items():
        vals = np.array(vals)
        re[k] = np.array([signature_re(truth[:, :, j], vals[:, :, j]) for j in range(len(seeds))])
    return SignatureTrial(re, offdiag)


SWEEP_AXES = ("radius", "snr", "source_depth", "n_sources")


@dataclass(frozen=True)
class SweepCell:
    radius: float = 400.0
    snr: float | None = None
    source_depth: int = 3
    n_sources: int = 8


def _sweep_cell(case_kwargs, cell, frequencies, seeds, lambda_scale, methods):
    try:
        case = desk_case(**{**case_kwargs, "n_sources": int(cell.n_sources),
                            "source_depth": int(cell.source_depth)})
        m0 = starting_model(case, radius=cell.radius)
        snr = None if cell.snr is None or np.isinf(cell.snr) else cell.snr
        trial = signature_trial(case, m0, frequencies, snr, seeds, lambda_scale, methods)
    except (linsolve.SingularMatrixError, ValueError, ZeroDivisionError) as exc:
        log.warning("sweep cell %s failed: %s", cell, exc)
        return {k: (float("nan"), 0) for k in methods}
    return {k: (float(np.median([mean_re(r) for r in trial.re[k]])), len(seeds))
            for k in methods}


def sweep(case_kwargs: dict, base: SweepCell, axis: str, values: Sequence,
          second_axis: str | None = None, second_values: Sequence = (None,),
          frequencies: Sequence[float] = (3.0, 4.0, 5.0, 6.0, 7.0, 8.0), seeds=(0,),
          lambda_scale: float = 0.1, methods=METHODS, workers: int = 1):
    """Grid-sweep one or two of ``SWEEP_AXES`` around ``base``.

    Returns rows ``(value, second_value, method, median_mean_re, n_seeds)``:
    the RE is averaged over sources and the median is taken over seeds.  A
    failing cell yields NaN rows and the sweep goes on.  With ``workers > 1``
    cells run in a process pool; rows keep the grid order either way.
    """
    for name in (axis, second_axis):
        if name is not None and name not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {name!r}; expected one of {SWEEP_AXES}")
    if second_axis is None:
        second_values = (None,)
    keys, cells = [], []
    for v1 in values:
        for v2 in second_values:
            cell = replace(base, **{axis: v1})
            if second_axis is not None:
                cell = replace(cell, **{second_axis: v2})
            keys.append((v1, v2))
            cells.append(cell)
    args = (case_kwargs, frequencies, tuple(seeds), lambda_scale, tuple(methods))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell_args, [(args, c) for c in cells]))
    else:
        results = [_sweep_cell_args((args, c)) for c in cells]
    rows = []
    for (v1, v2), res in zip(keys, results):
        rows.extend((v1, v2, k, res[k][0], res[k][1]) for k in methods)
    return rows


def _sweep_cell_args(packed):
    (case_kwargs, frequencies, seeds, lambda_scale, methods), cell = packed
    return _sweep_cell(case_kwargs, cell, frequencies, seeds, lambda_scale, methods)
