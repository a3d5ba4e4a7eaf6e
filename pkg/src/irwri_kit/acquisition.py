"""Source/receiver operators, Ricker signatures, synthetic data and noise."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .grid_model import Grid2D, SquaredSlownessModel
from .helmholtz import FIVE_POINT, assemble

__all__ = [
    "AcquisitionGeometry",
    "SignatureSet",
    "DataMatrix",
    "line_geometry",
    "ricker_spectrum",
    "random_signatures",
    "synthesize_data",
    "add_noise",
    "write_data_block",
    "read_data_block",
    "write_manifest",
    "read_manifest",
]


@dataclass(frozen=True, eq=False)
class AcquisitionGeometry:
    """Point sources and receivers on grid nodes.

    ``source_nodes`` and ``receiver_nodes`` are flat padded indices.  ``phi``
    (N x n_s) injects one unit source per column; ``p`` (M x N) samples the
    wavefield at the receivers.
    """

    grid: Grid2D
    source_nodes: np.ndarray
    receiver_nodes: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source_nodes, dtype=np.int64).ravel()
        rec = np.asarray(self.receiver_nodes, dtype=np.int64).ravel()
        for name, nodes in (("source", src), ("receiver", rec)):
            if nodes.size == 0:
                raise ValueError(f"need at least one {name}")
            if np.unique(nodes).size != nodes.size:
                raise ValueError(f"{name} nodes must be distinct")
            if np.any((nodes < 0) | (nodes >= self.grid.n)) or not np.all(
                    self.grid.is_physical(nodes)):
                raise ValueError(f"{name} nodes must lie in the physical region")
        object.__setattr__(self, "source_nodes", src)
        object.__setattr__(self, "receiver_nodes", rec)

    @property
    def n_sources(self) -> int:
        return self.source_nodes.size

    @property
    def n_receivers(self) -> int:
        return self.receiver_nodes.size

    @property
    def phi(self) -> sp.csc_matrix:
        ns = self.n_sources
        return sp.csc_matrix((np.ones(ns), (self.source_nodes, np.arange(ns))),
                             shape=(self.grid.n, ns))

    @property
    def p(self) -> sp.csr_matrix:
        nr = self.n_receivers
        return sp.csr_matrix((np.ones(nr), (np.arange(nr), self.receiver_nodes)),
                             shape=(nr, self.grid.n))

    def q_diagonal(self, source: int | None = None) -> np.ndarray:
        """Diagonal of Q = I - Phi Phi^T, or of Q_i = I - phi_i phi_i^T."""
        q = np.ones(self.grid.n)
        q[self.source_nodes if source is None else self.source_nodes[source]] = 0.0
        return q

    def q(self, source: int | None = None) -> sp.dia_matrix:
        return sp.diags(self.q_diagonal(source))

    def sample(self, U: np.ndarray) -> np.ndarray:
        """P @ U without building P."""
        return np.asarray(U)[self.receiver_nodes]

    def inject(self, S: np.ndarray) -> np.ndarray:
        """Phi @ S for an ``n_s x k`` block."""
        S = np.asarray(S)
        out = np.zeros((self.grid.n,) + S.shape[1:], dtype=np.result_type(S, np.float64))
        out[self.source_nodes] = S
        return out


def line_geometry(grid: Grid2D, n_sources: int, n_receivers: int, source_depth: int = 0,
                  receiver_depth: int = 0, margin: int = 2) -> AcquisitionGeometry:
    """Horizontal source and receiver lines spread evenly across the model.

    Depths are physical row indices (0 = first row below the surface).
    """
    def spread(count):
        if count > grid.nx - 2 * margin:
            raise ValueError(f"cannot fit {count} distinct nodes on a line of {grid.nx}")
        return np.round(np.linspace(margin, grid.nx - 1 - margin, count)).astype(int)

    sx = spread(n_sources)
    rx = spread(n_receivers)
    return AcquisitionGeometry(grid, grid.node_index(sx, np.full_like(sx, source_depth)),
                               grid.node_index(rx, np.full_like(rx, receiver_depth)))


def ricker_spectrum(f, f_c: float, t0: float = 0.0):
    """Fourier spectrum of a Ricker wavelet of peak frequency ``f_c`` delayed by ``t0``."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be >= 0")
    if f_c <= 0:
        raise ValueError("central frequency must be positive")
    amp = 2.0 * f**2 / (np.sqrt(np.pi) * f_c**3) * np.exp(-(f**2) / f_c**2)
    return amp * np.exp(-2j * np.pi * f * t0)


@dataclass(frozen=True)
class SignatureSet:
    """Per-source Ricker parameters; evaluates to complex amplitudes per frequency."""

    f_c: np.ndarray
    t0: np.ndarray
    seed: int | None = None

    @property
    def n_sources(self) -> int:
        return len(self.f_c)

    def at(self, freq: float) -> np.ndarray:
        return np.array([ricker_spectrum(freq, fc, t) for fc, t in zip(self.f_c, self.t0)])

    def matrix(self, freq: float) -> np.ndarray:
        """Diagonal signature matrix S at ``freq``."""
        return np.diag(self.at(freq))


def random_signatures(n_sources: int, seed: int, fc_range=(7.0, 15.0),
                      t0_range=(0.0, 0.4)) -> SignatureSet:
    """Random Ricker parameters, uniform over the given ranges."""
    rng = np.random.default_rng(seed)
    return SignatureSet(rng.uniform(*fc_range, n_sources), rng.uniform(*t0_range, n_sources),
                        seed)


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Recorded data ``D`` (M x n_s) at one frequency (Hz)."""

    values: np.ndarray
    frequency: float
    snr_db: float | None = None

    @property
    def shape(self):
        return self.values.shape


def synthesize_data(m_true: SquaredSlownessModel, geometry: AcquisitionGeometry, signatures,
                    omega: float, stencil_kind: str = FIVE_POINT,
                    pml_velocity: float | None = None,
                    counters: linsolve.SolverCounters | None = None,
                    return_wavefields: bool = False):
    """Noise-free data ``D = P A(m)^-1 Phi Diag(s)`` with one factorization.

    ``signatures`` is a length-n_s complex vector (or a diagonal matrix).
    """
    s = np.asarray(signatures)
    if s.ndim == 2:
        s = np.diag(s)
    if s.shape != (geometry.n_sources,):
        raise ValueError(f"need {geometry.n_sources} signatures, got shape {s.shape}")
    A = assemble(m_true, omega, stencil_kind, pml_velocity)
    F = linsolve.factorize(A.matrix, counters)
    U = linsolve.solve_multi(F, geometry.inject(np.diag(s)))
    D = DataMatrix(geometry.sample(U), omega / (2 * np.pi))
    return (D, U) if return_wavefields else D


def add_noise(D: DataMatrix, target_snr: float, seed: int) -> DataMatrix:
    """Add circular complex Gaussian noise at ``target_snr`` dB.

    The noise draw is rescaled so the realised RMS ratio matches the target.
    """
    clean = np.asarray(D.values)
    rms = np.sqrt(np.mean(np.abs(clean) ** 2))
    if rms == 0:
        raise ValueError("cannot set an SNR on zero data")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    noise *= rms / 10 ** (target_snr / 20) / np.sqrt(np.mean(np.abs(noise) ** 2))
    return DataMatrix(clean + noise, D.frequency, float(target_snr))


# --- data files ----------------------------------------------------------------

_BLOCK_MAGIC = b"IRWD"
_BLOCK_HEADER = struct.Struct("<4sIdII")


def write_data_block(path, D: DataMatrix) -> None:
    """Binary block: magic, version, frequency (Hz), M, n_s, then complex128 LE, row-major."""
    vals = np.ascontiguousarray(D.values, dtype="<c16")
    m, ns = vals.shape
    with open(path, "wb") as fh:
        fh.write(_BLOCK_HEADER.pack(_BLOCK_MAGIC, 1, float(D.frequency), m, ns))
        fh.write(vals.tobytes())


def read_data_block(path) -> DataMatrix:
    raw = Path(path).read_bytes()
    magic, version, freq, m, ns = _BLOCK_HEADER.unpack_from(raw)
    if magic != _BLOCK_MAGIC or version != 1:
        raise ValueError(f"{path}: not a data block")
    vals = np.frombuffer(raw, dtype="<c16", offset=_BLOCK_HEADER.size)
    if vals.size != m * ns:
        raise ValueError(f"{path}: expected {m * ns} values, found {vals.size}")
    return DataMatrix(vals.reshape(m, ns).copy(), freq)


def write_manifest(path, entries: dict) -> None:
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
