"""Discrete Helmholtz operator A(m) = Laplacian + omega^2 M(m) with PML.

Time convention is exp(-i omega t) throughout, so outgoing waves behave like
exp(+i k r) and the PML stretch is ``s = 1 + i sigma / omega``.

Every row of the operator is multiplied by the node's stretch product
``e = s_x s_z``.  This keeps the matrix complex-symmetric (A.T == A) with
the PML switched on.  The price is that the mass term reads
``omega^2 * M(m)`` with ``M`` weighted by ``e`` inside the PML; in the
physical region ``e == 1`` and for the five-point stencil ``M(m)`` reduces
to ``Diag(m)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import hankel1

from .grid_model import Grid2D, SquaredSlownessModel

__all__ = [
    "FIVE_POINT",
    "MIXED_NINE_POINT",
    "PmlProfile",
    "HelmholtzOperator",
    "DispersionWarning",
    "pml_profile",
    "assemble",
    "assemble_laplacian",
    "mass_matrix",
    "mass_jacobian",
    "apply",
    "adjoint_apply",
    "greens_function_oracle",
    "dump_coo",
]

FIVE_POINT = "five_point"
MIXED_NINE_POINT = "mixed_nine_point"
STENCILS = (FIVE_POINT, MIXED_NINE_POINT)

# Published mixed-grid weights: Cartesian/rotated Laplacian split and
# anti-lumped mass distribution (centre, side neighbour, corner neighbour).
NINE_POINT_CARTESIAN = 0.5461
NINE_POINT_MASS = (0.6248, 0.09381, (1.0 - 0.6248 - 4 * 0.09381) / 4)

PML_ORDER = 2
PML_REFLECTION = 1e-3
# Damping is calibrated to PML_REFLECTION for a layer this many nodes thick;
# thicker layers keep the same peak damping and absorb more.
PML_REFERENCE_NODES = 10

_SIDES = ((0, 1), (0, -1), (1, 0), (-1, 0))
_CORNERS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


class DispersionWarning(UserWarning):
    """Fewer than four grid points per shortest wavelength."""


@dataclass(frozen=True)
class PmlProfile:
    """Complex coordinate stretch along x and z.

    ``sx(pos)`` and ``sz(pos)`` accept (possibly half-integer) padded index
    positions; positions outside the grid are clamped to the outer PML edge.
    """

    grid: Grid2D
    omega: float
    c_pml: float
    p_pml: int = PML_ORDER

    def sigma_max(self, h: float) -> float:
        """Peak damping for spacing ``h``.

        A ``PML_REFERENCE_NODES``-thick layer has theoretical normal-incidence
        reflection ``PML_REFLECTION``; an ``npml``-thick one has
        ``PML_REFLECTION ** (npml / PML_REFERENCE_NODES)``.
        """
        if self.grid.npml == 0:
            return 0.0
        width = PML_REFERENCE_NODES * h
        return (self.p_pml + 1) * self.c_pml * np.log(1.0 / PML_REFLECTION) / (2.0 * width)

    def _stretch(self, pos, first, last, pad_lo, pad_hi, h):
        pos = np.asarray(pos, dtype=float)
        depth = np.zeros_like(pos)
        if pad_lo:
            depth = np.where(pos < first, first - pos, depth)
        if pad_hi:
            depth = np.where(pos > last, pos - last, depth)
        width = self.grid.npml
        if width == 0:
            return np.ones_like(pos, dtype=complex)
        frac = np.minimum(depth / width, 1.0)
        sigma = self.sigma_max(h) * frac**self.p_pml
        return 1.0 + 1j * sigma / self.omega

    def sx(self, pos):
        g = self.grid
        return self._stretch(pos, g.pad_left, g.pad_left + g.nx - 1,
                             g.pad_left > 0, g.pad_right > 0, g.dx)

    def sz(self, pos):
        g = self.grid
        return self._stretch(pos, g.pad_top, g.pad_top + g.nz - 1,
                             g.pad_top > 0, g.pad_bottom > 0, g.dz)

    def node_weight(self) -> np.ndarray:
        """Flat vector ``e = sx * sz`` at every node (1 in the physical region)."""
        g = self.grid
        iz, ix = np.meshgrid(np.arange(g.nz_total), np.arange(g.nx_total), indexing="ij")
        return (self.sx(ix) * self.sz(iz)).ravel()


def pml_profile(grid: Grid2D, omega: float, c_pml: float) -> PmlProfile:
    if omega <= 0:
        raise ValueError("omega must be positive")
    if c_pml <= 0:
        raise ValueError("PML reference velocity must be positive")
    return PmlProfile(grid, float(omega), float(c_pml))


@dataclass(frozen=True, eq=False)
class HelmholtzOperator:
    """Assembled operator at one angular frequency.

    ``matrix = laplacian + omega**2 * mass_matrix(m)``; ``node_weight`` is the
    PML stretch product used to weight the mass term.
    """

    omega: float
    grid: Grid2D
    matrix: sp.csc_matrix
    stencil_kind: str
    laplacian: sp.csc_matrix
    node_weight: np.ndarray
    pml: PmlProfile

    @property
    def shape(self):
        return self.matrix.shape

    def mass_jacobian(self, u: np.ndarray) -> sp.csr_matrix:
        """Sparse W(u) with ``mass_matrix(m) @ u == W(u) @ m``."""
        return mass_jacobian(self.grid, u, self.stencil_kind, self.node_weight)

    def with_model(self, m: SquaredSlownessModel) -> HelmholtzOperator:
        """Same Laplacian and PML, new model."""
        _check_model(self.grid, m)
        mass = mass_matrix(self.grid, m.values, self.stencil_kind, self.node_weight)
        matrix = (self.laplacian + self.omega**2 * mass).tocsc()
        return HelmholtzOperator(self.omega, self.grid, matrix, self.stencil_kind,
                                 self.laplacian, self.node_weight, self.pml)


def _check_model(grid: Grid2D, m: SquaredSlownessModel):
    if m.grid != grid or m.values.shape != (grid.n,):
        raise ValueError(f"model grid does not match operator grid (N={grid.n})")


def _check_stencil(grid: Grid2D, stencil_kind: str):
    if stencil_kind not in STENCILS:
        raise ValueError(f"unknown stencil {stencil_kind!r}; expected one of {STENCILS}")
    if stencil_kind == MIXED_NINE_POINT and not np.isclose(grid.dx, grid.dz):
        raise ValueError("the mixed nine-point stencil requires dx == dz")


def _node_coords(grid: Grid2D):
    iz, ix = np.meshgrid(np.arange(grid.nz_total), np.arange(grid.nx_total), indexing="ij")
    return iz.ravel(), ix.ravel()


def assemble_laplacian(grid: Grid2D, omega: float, stencil_kind: str = FIVE_POINT,
                       pml_velocity: float = 1500.0):
    """Return ``(laplacian, node_weight, pml)`` for the stretched, row-scaled Laplacian.

    Nodes outside the padded grid are zero (Dirichlet); with a free surface
    that zero row sits one grid step above the first physical row.
    """
    _check_stencil(grid, stencil_kind)
    pml = pml_profile(grid, omega, pml_velocity)
    iz, ix = _node_coords(grid)
    nzt, nxt = grid.shape
    n = grid.n
    a = 1.0 if stencil_kind == FIVE_POINT else NINE_POINT_CARTESIAN

    def coupling(dzo, dxo):
        zm = iz + 0.5 * dzo
        xm = ix + 0.5 * dxo
        sx = pml.sx(xm)
        sz = pml.sz(zm)
        alpha = sz / sx
        beta = sx / sz
        if dzo == 0:
            return (a * alpha + 0.5 * (1 - a) * (alpha - beta)) / grid.dx**2
        if dxo == 0:
            return (a * beta - 0.5 * (1 - a) * (alpha - beta)) / grid.dz**2
        return (1 - a) * 0.5 * (alpha + beta) / (2.0 * grid.dx * grid.dz)

    directions = _SIDES if stencil_kind == FIVE_POINT else _SIDES + _CORNERS
    rows, cols, vals = [], [], []
    diag = np.zeros(n, dtype=complex)
    for dzo, dxo in directions:
        c = coupling(dzo, dxo)
        diag -= c
        qz, qx = iz + dzo, ix + dxo
        inside = (qz >= 0) & (qz < nzt) & (qx >= 0) & (qx < nxt)
        p = np.flatnonzero(inside)
        rows.append(p)
        cols.append(qz[inside] * nxt + qx[inside])
        vals.append(c[inside])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    lap = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    return lap, pml.node_weight(), pml


def _neighbour_weights(grid: Grid2D, stencil_kind: str):
    """Off-diagonal anti-lumped mass weights as a symmetric sparse matrix."""
    n = grid.n
    if stencil_kind == FIVE_POINT:
        return 1.0, sp.csr_matrix((n, n))
    centre, side, corner = NINE_POINT_MASS
    iz, ix = _node_coords(grid)
    nzt, nxt = grid.shape
    rows, cols, vals = [], [], []
    for dirs, w in ((_SIDES, side), (_CORNERS, corner)):
        for dzo, dxo in dirs:
            qz, qx = iz + dzo, ix + dxo
            inside = (qz >= 0) & (qz < nzt) & (qx >= 0) & (qx < nxt)
            rows.append(np.flatnonzero(inside))
            cols.append(qz[inside] * nxt + qx[inside])
            vals.append(np.full(inside.sum(), w))
    nw = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(n, n))
    return centre, nw


def mass_matrix(grid: Grid2D, m: np.ndarray, stencil_kind: str,
                node_weight: np.ndarray) -> sp.csr_matrix:
    """Mass matrix M(m), linear in m and complex-symmetric.

    Entry (p, q) is ``w_pq * (e_p m_p + e_q m_q) / 2`` with the stencil's
    anti-lumped weights ``w`` (just the identity for the five-point stencil).
    """
    em = node_weight * np.asarray(m)
    centre, nw = _neighbour_weights(grid, stencil_kind)
    if stencil_kind == FIVE_POINT:
        return sp.diags(em, format="csr")
    coo = nw.tocoo()
    off = sp.csr_matrix((coo.data * 0.5 * (em[coo.row] + em[coo.col]), (coo.row, coo.col)),
                        shape=nw.shape)
    return (sp.diags(centre * em) + off).tocsr()


def mass_jacobian(grid: Grid2D, u: np.ndarray, stencil_kind: str,
                  node_weight: np.ndarray) -> sp.csr_matrix:
    """W(u) such that ``mass_matrix(m) @ u == W(u) @ m`` for every m."""
    u = np.asarray(u)
    eu = node_weight * u
    if stencil_kind == FIVE_POINT:
        return sp.diags(eu, format="csr")
    centre, nw = _neighbour_weights(grid, stencil_kind)
    diag = node_weight * (centre * u + 0.5 * (nw @ u))
    return (sp.diags(diag) + 0.5 * nw @ sp.diags(eu)).tocsr()


def assemble(m: SquaredSlownessModel, omega: float, stencil_kind: str = FIVE_POINT,
             pml_velocity: float | None = None) -> HelmholtzOperator:
    """Assemble A(m) at angular frequency ``omega``.

    ``pml_velocity`` sets the PML damping; by default the fastest velocity of
    ``m``.  Keep it fixed across calls when A must stay affine in m.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    grid = m.grid
    _check_model(grid, m)
    if pml_velocity is None:
        pml_velocity = float(1.0 / np.sqrt(m.values.min()))
    vmin = float(1.0 / np.sqrt(m.values.max()))
    ppw = vmin / (omega / (2 * np.pi)) / max(grid.dx, grid.dz)
    if ppw < 4:
        warnings.warn(f"only {ppw:.2f} grid points per shortest wavelength", DispersionWarning,
                      stacklevel=2)
    lap, weight, pml = assemble_laplacian(grid, omega, stencil_kind, pml_velocity)
    mass = mass_matrix(grid, m.values, stencil_kind, weight)
    return HelmholtzOperator(float(omega), grid, (lap + omega**2 * mass).tocsc(), stencil_kind,
                             lap, weight, pml)


def _check_vec(A: HelmholtzOperator, x):
    x = np.asarray(x)
    if x.shape[0] != A.grid.n:
        raise ValueError(f"vector has {x.shape[0]} rows, operator has N={A.grid.n}")
    return x


def apply(A: HelmholtzOperator, x) -> np.ndarray:
    return A.matrix @ _check_vec(A, x)


def adjoint_apply(A: HelmholtzOperator, x) -> np.ndarray:
    """Conjugate-transpose product A^H x."""
    return A.matrix.conj().T @ _check_vec(A, x)


def greens_function_oracle(omega: float, c: float, source, receiver) -> complex:
    """2D free-space Green's function of ``Lap u + (omega/c)^2 u = -delta``.

    ``source`` and ``receiver`` are ``(x, z)`` positions in meters.  With the
    exp(-i omega t) convention the outgoing solution is ``(i/4) H0^(1)(k r)``.
    """
    r = float(np.hypot(receiver[0] - source[0], receiver[1] - source[1]))
    if r == 0:
        raise ZeroDivisionError("Green's function is singular at the source")
    return 0.25j * hankel1(0, omega * r / c)


def dump_coo(path, matrix) -> None:
    """Write a sparse matrix as ``row col re im`` text lines."""
    coo = sp.coo_matrix(matrix)
    data = np.asarray(coo.data, dtype=complex)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, data):
            fh.write(f"{r} {c} {float(v.real)!r} {float(v.imag)!r}\n")
