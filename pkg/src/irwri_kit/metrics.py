"""Error measures for signatures, data and models."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid_model import SquaredSlownessModel

__all__ = [
    "ConvergenceRecord",
    "signature_re",
    "data_snr",
    "model_error_map",
    "model_re",
    "mean_re",
    "write_table",
]


@dataclass(frozen=True)
class ConvergenceRecord:
    iteration: int
    pde_misfit: float
    data_misfit: float
    model_re: float

    def __post_init__(self):
        if min(self.pde_misfit, self.data_misfit, self.model_re) < 0:
            raise ValueError("misfits and errors are non-negative")


def signature_re(s_true, s_est) -> float:
    """Relative error of an estimated signature over its frequency samples.

    ``sqrt(sum |s_true - s_est|^2) / sqrt(sum |s_true|^2)``, using complex
    moduli so the result is real.  A trailing axis beyond the first is
    treated as separate sources: a 2D ``(n_freq, n_s)`` input returns one RE
    per source.
    """
    s_true = np.asarray(s_true)
    s_est = np.asarray(s_est)
    if s_true.shape != s_est.shape:
        raise ValueError(f"shape mismatch {s_true.shape} vs {s_est.shape}")
    energy = np.sqrt(np.sum(np.abs(s_true) ** 2, axis=0))
    if np.any(energy == 0):
        raise ValueError("true signature has zero energy")
    re = np.sqrt(np.sum(np.abs(s_true - s_est) ** 2, axis=0)) / energy
    return float(re) if np.ndim(re) == 0 else re


def _values(D):
    return np.asarray(getattr(D, "values", D))


def data_snr(clean, noisy) -> float:
    """``20 log10(rms(clean) / rms(noisy - clean))`` in dB; +inf when noise-free."""
    c = _values(clean)
    n = _values(noisy) - c
    if c.shape != n.shape:
        raise ValueError("data shapes differ")
    noise_rms = np.sqrt(np.mean(np.abs(n) ** 2))
    if noise_rms == 0:
        return float("inf")
    return float(20 * np.log10(np.sqrt(np.mean(np.abs(c) ** 2)) / noise_rms))


def model_error_map(m_true: SquaredSlownessModel, m_est: SquaredSlownessModel):
    """Velocity difference ``v_est - v_true`` on the physical grid and its scalar RE."""
    if m_true.grid != m_est.grid:
        raise ValueError("models live on different grids")
    vt = m_true.velocity()
    ve = m_est.velocity()
    diff = ve - vt
    return diff, float(np.linalg.norm(diff) / np.linalg.norm(vt))


def model_re(m_true: SquaredSlownessModel, m_est: SquaredSlownessModel,
             on: str = "velocity") -> float:
    """Relative model error on velocity (default) or on squared slowness."""
    if on == "velocity":
        return model_error_map(m_true, m_est)[1]
    if on == "slowness":
        g = m_true.grid
        t, e = g.crop(m_true.values), g.crop(m_est.values)
        return float(np.linalg.norm(e - t) / np.linalg.norm(t))
    raise ValueError(f"unknown parametrization {on!r}")


def mean_re(values) -> float:
    """Arithmetic mean over sources, ignoring NaN cells."""
    return float(np.nanmean(np.asarray(values, dtype=float)))


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
