"""Grid, squared-slowness model and the binary grid file format.

All field vectors in the package live on the *padded* grid: the physical
``nz x nx`` block surrounded by PML nodes on the left, right and bottom
edges, and on the top edge unless a free surface is requested.  Vectors are
flattened in C order from arrays of shape ``(nz_total, nx_total)``, so the
flat index of node ``(iz, ix)`` is ``iz * nx_total + ix``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

__all__ = [
    "Grid2D",
    "SquaredSlownessModel",
    "velocity_to_squared_slowness",
    "squared_slowness_to_velocity",
    "smooth_model",
    "write_grid",
    "read_grid",
    "export_csv",
]


@dataclass(frozen=True)
class Grid2D:
    """Regular 2D grid with PML padding.

    Parameters
    ----------
    nx, nz : int
        Number of physical (non-PML) nodes along x and z.
    dx, dz : float
        Grid spacing in meters.
    npml : int
        PML thickness in nodes on every absorbing edge.
    free_surface_top : bool
        If True the top edge carries a pressure-release boundary and no PML.
    """

    nx: int
    nz: int
    dx: float
    dz: float
    npml: int = 0
    free_surface_top: bool = False

    def __post_init__(self):
        if self.nx < 3 or self.nz < 3:
            raise ValueError(f"grid needs nx, nz >= 3, got nx={self.nx}, nz={self.nz}")
        if not (self.dx > 0 and self.dz > 0):
            raise ValueError("grid spacing must be positive")
        if self.npml < 0:
            raise ValueError("npml must be >= 0")

    @property
    def pad_left(self) -> int:
        return self.npml

    @property
    def pad_right(self) -> int:
        return self.npml

    @property
    def pad_top(self) -> int:
        return 0 if self.free_surface_top else self.npml

    @property
    def pad_bottom(self) -> int:
        return self.npml

    @property
    def nx_total(self) -> int:
        return self.nx + self.pad_left + self.pad_right

    @property
    def nz_total(self) -> int:
        return self.nz + self.pad_top + self.pad_bottom

    @property
    def shape(self) -> tuple[int, int]:
        """Padded array shape ``(nz_total, nx_total)``."""
        return (self.nz_total, self.nx_total)

    @property
    def physical_shape(self) -> tuple[int, int]:
        return (self.nz, self.nx)

    @property
    def n(self) -> int:
        """Total unknown count N."""
        return self.nx_total * self.nz_total

    @property
    def interior(self) -> tuple[slice, slice]:
        """Slices selecting the physical block from a padded ``(nz, nx)`` array."""
        return (slice(self.pad_top, self.pad_top + self.nz),
                slice(self.pad_left, self.pad_left + self.nx))

    def node_index(self, ix, iz):
        """Flat padded index of physical node(s) ``(ix, iz)``.

        ``iz = 0`` is the shallowest physical row (one grid step below the
        free surface when there is one).
        """
        ix = np.asarray(ix)
        iz = np.asarray(iz)
        if np.any((ix < 0) | (ix >= self.nx) | (iz < 0) | (iz >= self.nz)):
            raise ValueError("node outside the physical domain")
        return (iz + self.pad_top) * self.nx_total + (ix + self.pad_left)

    def is_physical(self, index) -> np.ndarray:
        iz, ix = np.divmod(np.asarray(index), self.nx_total)
        return ((iz >= self.pad_top) & (iz < self.pad_top + self.nz)
                & (ix >= self.pad_left) & (ix < self.pad_left + self.nx))

    def pad(self, field2d: np.ndarray) -> np.ndarray:
        """Extend a physical ``(nz, nx)`` field into the PML by edge replication."""
        field2d = np.asarray(field2d)
        if field2d.shape != self.physical_shape:
            raise ValueError(f"expected shape {self.physical_shape}, got {field2d.shape}")
        widths = ((self.pad_top, self.pad_bottom), (self.pad_left, self.pad_right))
        return np.pad(field2d, widths, mode="edge")

    def crop(self, vec: np.ndarray) -> np.ndarray:
        """Physical ``(nz, nx)`` block of a flat padded vector."""
        vec = np.asarray(vec)
        if vec.shape[0] != self.n:
            raise ValueError(f"vector length {vec.shape[0]} does not match N={self.n}")
        return vec.reshape(self.shape + vec.shape[1:])[self.interior]

    def physical_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.interior] = True
        return mask.ravel()


@dataclass(frozen=True, eq=False)
class SquaredSlownessModel:
    """Squared slowness m = 1/v^2 (s^2/m^2) on the padded grid, with box bounds."""

    grid: Grid2D
    values: np.ndarray
    m_min: np.ndarray = field(default=None)
    m_max: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.grid.n
        values = np.array(self.values, dtype=float).ravel()
        if values.shape != (n,):
            raise ValueError(f"model length {values.size} does not match N={n}")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("squared slowness must be finite and strictly positive")
        m_min = np.zeros(n) if self.m_min is None else np.broadcast_to(
            np.asarray(self.m_min, dtype=float).ravel(), (n,)).copy()
        m_max = np.full(n, np.inf) if self.m_max is None else np.broadcast_to(
            np.asarray(self.m_max, dtype=float).ravel(), (n,)).copy()
        if np.any(m_min > m_max):
            raise ValueError("lower bound exceeds upper bound")
        for arr in (values, m_min, m_max):
            arr.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "m_min", m_min)
        object.__setattr__(self, "m_max", m_max)

    def with_values(self, values: np.ndarray) -> SquaredSlownessModel:
        return SquaredSlownessModel(self.grid, values, self.m_min, self.m_max)

    def project(self, values: np.ndarray | None = None) -> SquaredSlownessModel:
        """Clip ``values`` (default: own values) onto the bound box."""
        v = self.values if values is None else values
        return self.with_values(np.clip(v, self.m_min, self.m_max))

    def velocity(self) -> np.ndarray:
        """Physical-region velocity as an ``(nz, nx)`` array."""
        return self.grid.crop(squared_slowness_to_velocity(self.values))


def _check_velocity(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("velocity must be finite and strictly positive")
    return v


def velocity_to_squared_slowness(v, grid: Grid2D | None = None, bounds="auto"):
    """Convert velocity (m/s) to squared slowness.

    With ``grid=None`` this is the plain elementwise map ``1/v**2`` on any
    array.  With a grid, ``v`` is the physical ``(nz, nx)`` velocity, which is
    padded into the PML and wrapped in a :class:`SquaredSlownessModel`.

    ``bounds`` is ``None`` (no bounds), ``"auto"`` (velocity range widened by
    10% on each side), or a ``(v_min, v_max)`` velocity pair.
    """
    v = _check_velocity(v)
    if grid is None:
        return 1.0 / v**2
    vpad = grid.pad(v).ravel()
    m_min = m_max = None
    if bounds is not None:
        if isinstance(bounds, str):
            if bounds != "auto":
                raise ValueError(f"unknown bounds spec {bounds!r}")
            vlo, vhi = 0.9 * v.min(), 1.1 * v.max()
        else:
            vlo, vhi = bounds
        m_min, m_max = 1.0 / vhi**2, 1.0 / vlo**2
    return SquaredSlownessModel(grid, 1.0 / vpad**2, m_min, m_max)


def squared_slowness_to_velocity(m) -> np.ndarray:
    if isinstance(m, SquaredSlownessModel):
        return m.velocity()
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise ValueError("squared slowness must be finite and strictly positive")
    return 1.0 / np.sqrt(m)


def smooth_model(m: SquaredSlownessModel, radius: float) -> SquaredSlownessModel:
    """Gaussian blur of the physical velocity with standard deviation ``radius`` (m).

    Boundaries are reflected, so constants and the field integral are
    preserved.  Bounds are carried over unchanged.
    """
    if radius < 0:
        raise ValueError("smoothing radius must be >= 0")
    if radius == 0:
        return m
    grid = m.grid
    v = m.velocity()
    vs = ndimage.gaussian_filter(v, sigma=(radius / grid.dz, radius / grid.dx), mode="reflect")
    return SquaredSlownessModel(grid, 1.0 / grid.pad(vs).ravel() ** 2, m.m_min, m.m_max)


# --- binary grid files -------------------------------------------------------

_MAGIC = b"IRWG"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIddB7x")
_REAL, _COMPLEX = 0, 1


def write_grid(path, data: np.ndarray, dx: float, dz: float) -> None:
    """Write a real or complex ``(nz, nx)`` array as a GridFile."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("grid files hold 2D arrays")
    nz, nx = data.shape
    if np.iscomplexobj(data):
        kind = _COMPLEX
        payload = np.ascontiguousarray(data, dtype="<c16").view("<f8")
    else:
        kind = _REAL
        payload = np.ascontiguousarray(data, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, nx, nz, float(dx), float(dz), kind))
        fh.write(payload.tobytes())


def read_grid(path):
    """Read a GridFile; returns ``(data, dx, dz)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, nx, nz, dx, dz, kind = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a grid file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    count = nx * nz * (2 if kind == _COMPLEX else 1)
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if payload.size != count:
        raise ValueError(f"{path}: payload has {payload.size} scalars, expected {count}")
    if kind == _COMPLEX:
        data = payload.view("<c16").reshape(nz, nx).copy()
    elif kind == _REAL:
        data = payload.reshape(nz, nx).copy()
    else:
        raise ValueError(f"{path}: unknown scalar kind {kind}")
    return data, dx, dz


def export_csv(path, data: np.ndarray, dx: float, dz: float, value_name: str = "value") -> None:
    """Write a real ``(nz, nx)`` grid as ``x_m, z_m, value`` rows."""
    data = np.asarray(data)
    if np.iscomplexobj(data):
        raise ValueError("CSV export is for real grids")
    nz, nx = data.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_m", "z_m", value_name])
        for iz in range(nz):
            for ix in range(nx):
                w.writerow([ix * dx, iz * dz, repr(float(data[iz, ix]))])
