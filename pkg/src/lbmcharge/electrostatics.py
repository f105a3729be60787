"""Finite-volume discretisation of the electric potential.

The operator is ``A = -Laplace`` on cell averages, a 7-point stencil with
center 6 and neighbours -1 in lattice units. Dirichlet and Neumann faces are
folded into the stencils of the adjacent cells and into a fixed right-hand
side contribution, so no ghost values enter the solve. Only those cells carry
a private stencil; all others share one (quasi-constant storage).

Coefficient order in every stencil row: center, x-, x+, y-, y+, z-, z+.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import ConfigurationError
from .grid import NEAR_BC, NON_BC, Field, FlagField, exchange_ghosts, ordered_sum

CENTER = 0
POISSON = np.array([6.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0])

DIRICHLET, NEUMANN = "dirichlet", "neumann"


@dataclass(frozen=True)
class PotentialPatch:
    """Dirichlet value or Neumann outward derivative on a face rectangle.

    ``value`` is a number or a callable ``value(x, y, z)`` evaluated at the
    face centers (lattice coordinates). Neumann values are ``dPhi/dn`` along
    the outward normal times the cell size. ``lo``/``hi`` select tangential
    cell ranges as for the fluid patches.
    """

    face: str
    kind: str
    value: object = 0.0
    lo: tuple = None
    hi: tuple = None

    def __post_init__(self):
        if self.kind not in (DIRICHLET, NEUMANN):
            raise ConfigurationError(f"unknown potential boundary kind {self.kind!r}")


class StencilField:
    """Shared interior stencil plus private stencils indexed per cell.

    ``table[0]`` is the shared stencil; ``index`` holds the row of every
    cell (0 for the shared one).
    """

    def __init__(self, domain, table, index):
        self.domain = domain
        self.table = np.ascontiguousarray(table, dtype=float)
        self.index = index

    @property
    def shared(self):
        return self.table[0]

    @property
    def n_private(self):
        return len(self.table) - 1

    def stencil(self, cell):
        """Stencil row of a global interior cell."""
        d = self.domain
        bid, local = _locate(d, cell)
        return self.table[self.index[bid][local]]


def _locate(domain, cell):
    coords = tuple(int(cell[a]) // domain.block_cells[a] for a in range(3))
    bid = domain.block_id(coords)
    off = domain.block_offset(bid)
    g = domain.ghost_width
    return bid, tuple(int(cell[a]) - off[a] + g for a in range(3))


def _face_axis(face):
    axis = "xyz".index(face[0])
    return axis, (1 if face[1] == "+" else 0)


def face_centers(domain, face):
    """Coordinates of all face centers of one domain face, as 2-D arrays."""
    axis, side = _face_axis(face)
    t = [a for a in range(3) if a != axis]
    n = domain.global_cells
    ta = np.arange(n[t[0]]) + 0.5
    tb = np.arange(n[t[1]]) + 0.5
    A, B = np.meshgrid(ta, tb, indexing="ij")
    coords = [None] * 3
    coords[t[0]], coords[t[1]] = A, B
    coords[axis] = np.full_like(A, float(n[axis]) if side else 0.0)
    return coords


class PotentialBoundaries:
    """Per-face boundary kinds and values with coverage checks."""

    def __init__(self, domain, patches=()):
        self.domain = domain
        self.patches = tuple(patches)
        self.kind = {}
        self.value = {}
        for face in ("x-", "x+", "y-", "y+", "z-", "z+"):
            axis, _ = _face_axis(face)
            if domain.periodicity[axis]:
                continue
            t = [a for a in range(3) if a != axis]
            shape = (domain.global_cells[t[0]], domain.global_cells[t[1]])
            self.kind[face] = np.zeros(shape, dtype=np.int8)
            self.value[face] = np.zeros(shape)
        for p in self.patches:
            if p.face not in self.kind:
                raise ConfigurationError(f"potential patch on periodic or unknown face {p.face}")
            k = self.kind[p.face]
            lo = (0, 0) if p.lo is None else tuple(p.lo)
            hi = k.shape if p.hi is None else tuple(p.hi)
            sl = (slice(lo[0], hi[0]), slice(lo[1], hi[1]))
            if (k[sl] != 0).any():
                raise ConfigurationError(f"overlapping potential patches on face {p.face}")
            k[sl] = 1 if p.kind == DIRICHLET else 2
            if callable(p.value):
                coords = face_centers(domain, p.face)
                self.value[p.face][sl] = np.asarray(p.value(*coords), dtype=float)[sl]
            else:
                self.value[p.face][sl] = float(p.value)
        for face, k in self.kind.items():
            if (k == 0).any():
                raise ConfigurationError(f"potential face {face} has no boundary condition")

    @property
    def singular(self):
        """True when no Dirichlet value pins the potential."""
        return not any((k == 1).any() for k in self.kind.values())


def assemble_stencils(domain, boundaries):
    """Fold the boundary conditions into stencils and a fixed RHS term.

    Returns ``(stencils, rhs_bc, flags)`` where ``rhs_bc`` must be added to
    the charge right-hand side (see :func:`adapt_rhs`).
    """
    rows = {tuple(POISSON): 0}
    table = [POISSON.copy()]
    index = Field(domain, (), np.int32, 0)
    rhs_bc = Field(domain)
    flags = FlagField(domain)
    n = domain.block_cells
    g = domain.ghost_width
    for bid in range(domain.n_blocks):
        flags.interior(bid)[...] = NON_BC
        off = domain.block_offset(bid)
        coef = np.zeros(n + (7,))
        coef[...] = POISSON
        extra = np.zeros(n)
        touched = np.zeros(n, dtype=bool)
        for face, kinds in boundaries.kind.items():
            axis, side = _face_axis(face)
            edge = domain.global_cells[axis] - 1 if side else 0
            if not off[axis] <= edge < off[axis] + n[axis]:
                continue
            t = [a for a in range(3) if a != axis]
            sl_t = tuple(slice(off[a], off[a] + n[a]) for a in t)
            k = kinds[sl_t]
            v = boundaries.value[face][sl_t]
            cell = [slice(None)] * 3
            cell[axis] = edge - off[axis]
            cell = tuple(cell)
            slot = 1 + 2 * axis + side
            alpha = coef[cell + (slot,)].copy()
            dir_ = k == 1
            neu = k == 2
            coef[cell + (CENTER,)] -= np.where(dir_, alpha, 0.0)
            coef[cell + (CENTER,)] += np.where(neu, alpha, 0.0)
            extra[cell] += np.where(dir_, -2.0 * alpha * v, 0.0) + np.where(neu, -alpha * v, 0.0)
            coef[cell + (slot,)] = 0.0
            touched[cell] = True
        rhs_bc.interior(bid)[...] = extra
        fl = flags.interior(bid)
        fl[touched] = NEAR_BC
        idx = index.interior(bid)
        for local in zip(*np.nonzero(touched)):
            key = tuple(coef[local])
            row = rows.get(key)
            if row is None:
                row = rows[key] = len(table)
                table.append(np.array(key))
            idx[local] = row
    del g
    return StencilField(domain, np.array(table), index), rhs_bc, flags


def adapt_rhs(rhs, rhs_bc):
    """Add the folded boundary contribution to a raw right-hand side."""
    for a, b in zip(rhs.blocks, rhs_bc.blocks):
        a += b
    return rhs


@nb.njit(nogil=True, cache=True)
def overlap_kernel(out, origin, pos, radii, weights, sf, L, periodic):
    """Add ``weights[p] * overlap_fraction`` of every sphere to interior cells.

    The fraction counts sub-cell centers of an ``sf**3`` subdivision lying
    strictly inside the sphere.
    """
    nx, ny, nz = out.shape
    n = (nx, ny, nz)
    inv = 1.0 / sf
    norm = 1.0 / (sf * sf * sf)
    for p in range(pos.shape[0]):
        r = radii[p]
        r2 = r * r
        for sx in range(-1, 2):
            if sx != 0 and not periodic[0]:
                continue
            for sy in range(-1, 2):
                if sy != 0 and not periodic[1]:
                    continue
                for sz in range(-1, 2):
                    if sz != 0 and not periodic[2]:
                        continue
                    c = (pos[p, 0] + sx * L[0] - origin[0],
                         pos[p, 1] + sy * L[1] - origin[1],
                         pos[p, 2] + sz * L[2] - origin[2])
                    lo = np.empty(3, dtype=np.int64)
                    hi = np.empty(3, dtype=np.int64)
                    empty = False
                    for a in range(3):
                        lo[a] = max(1, int(math.floor(c[a] - r)))
                        hi[a] = min(n[a] - 1, int(math.floor(c[a] + r)) + 1)
                        if lo[a] >= hi[a]:
                            empty = True
                    if empty:
                        continue
                    for k in range(lo[2], hi[2]):
                        for j in range(lo[1], hi[1]):
                            for i in range(lo[0], hi[0]):
                                # cell fully inside or outside: decide from corners
                                dmin = 0.0
                                dmax = 0.0
                                for a, v in ((0, i), (1, j), (2, k)):
                                    d0 = v - c[a]
                                    d1 = v + 1.0 - c[a]
                                    if d0 > 0.0:
                                        dmin += d0 * d0
                                    elif d1 < 0.0:
                                        dmin += d1 * d1
                                    m = max(abs(d0), abs(d1))
                                    dmax += m * m
                                if dmin >= r2:
                                    continue
                                if dmax < r2:
                                    out[i, j, k] += weights[p]
                                    continue
                                count = 0
                                for c3 in range(sf):
                                    z = k + (c3 + 0.5) * inv - c[2]
                                    for b in range(sf):
                                        y = j + (b + 0.5) * inv - c[1]
                                        for a in range(sf):
                                            x = i + (a + 0.5) * inv - c[0]
                                            if x * x + y * y + z * z < r2:
                                                count += 1
                                out[i, j, k] += weights[p] * count * norm


def overlap_volume(domain, particles, subsampling, weights=None):
    """Field of summed overlap fractions (times ``weights``) of all spheres."""
    out = Field(domain)
    add_overlap(out, particles, subsampling, weights)
    return out


def add_overlap(out, particles, subsampling, weights=None):
    d = out.domain
    if weights is None:
        weights = np.ones(len(particles))
    L = np.array(d.global_cells, dtype=float)
    periodic = np.array(d.periodicity, dtype=np.bool_)
    for bid in range(d.n_blocks):
        origin = np.array(d.block_offset(bid), dtype=float) - d.ghost_width
        overlap_kernel(out[bid], origin, particles.positions, particles.radii,
                       np.asarray(weights, dtype=float), int(subsampling), L, periodic)
    return out


def set_charge_rhs(domain, particles, subsampling, charges=None):
    """Right-hand side ``charge / V_sphere * overlap`` summed over particles.

    ``charges`` are in right-hand-side units (charge scaled by
    ``1 / (permittivity * potential unit * cell size)``); defaults to the
    particles' own ``charges``.
    """
    charges = particles.charges if charges is None else np.asarray(charges, dtype=float)
    volumes = 4.0 / 3.0 * np.pi * particles.radii**3
    return overlap_volume(domain, particles, subsampling, charges / volumes)


def check_compatibility(rhs, boundaries, tol=1e-10):
    """Warn if a problem without Dirichlet faces has a non-zero net source."""
    if not boundaries.singular:
        return True
    total = ordered_sum([float(rhs.interior(b).sum()) for b in range(rhs.domain.n_blocks)])
    scale = ordered_sum([float(np.abs(rhs.interior(b)).sum()) for b in range(rhs.domain.n_blocks)])
    if abs(total) > tol * max(scale, 1.0):
        warnings.warn(f"right-hand side not compatible with pure Neumann/periodic problem: sum {total:.3e}")
        return False
    return True


@nb.njit(nogil=True, cache=True)
def _gradient_kernel(phi, out, low, high):
    nx, ny, nz = phi.shape
    w_axis = 1.0 / 18.0
    w_diag = 1.0 / 36.0
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                boundary = ((i == 1 and low[0]) or (i == nx - 2 and high[0])
                            or (j == 1 and low[1]) or (j == ny - 2 and high[1])
                            or (k == 1 and low[2]) or (k == nz - 2 and high[2]))
                if boundary:
                    idx = (i, j, k)
                    for a in range(3):
                        lo_ok = not (idx[a] == 1 and low[a])
                        hi_ok = not (idx[a] == phi.shape[a] - 2 and high[a])
                        p = [i, j, k]
                        m = [i, j, k]
                        p[a] += 1
                        m[a] -= 1
                        if lo_ok and hi_ok:
                            g = 0.5 * (phi[p[0], p[1], p[2]] - phi[m[0], m[1], m[2]])
                        elif hi_ok:
                            g = phi[p[0], p[1], p[2]] - phi[i, j, k]
                        elif lo_ok:
                            g = phi[i, j, k] - phi[m[0], m[1], m[2]]
                        else:
                            g = 0.0
                        out[i, j, k, a] = g
                    continue
                gx = w_axis * (phi[i + 1, j, k] - phi[i - 1, j, k]) + w_diag * (
                    phi[i + 1, j + 1, k] - phi[i - 1, j - 1, k] + phi[i + 1, j - 1, k] - phi[i - 1, j + 1, k]
                    + phi[i + 1, j, k + 1] - phi[i - 1, j, k - 1] + phi[i + 1, j, k - 1] - phi[i - 1, j, k + 1])
                gy = w_axis * (phi[i, j + 1, k] - phi[i, j - 1, k]) + w_diag * (
                    phi[i + 1, j + 1, k] - phi[i - 1, j - 1, k] - phi[i + 1, j - 1, k] + phi[i - 1, j + 1, k]
                    + phi[i, j + 1, k + 1] - phi[i, j - 1, k - 1] + phi[i, j + 1, k - 1] - phi[i, j - 1, k + 1])
                gz = w_axis * (phi[i, j, k + 1] - phi[i, j, k - 1]) + w_diag * (
                    phi[i + 1, j, k + 1] - phi[i - 1, j, k - 1] - phi[i + 1, j, k - 1] + phi[i - 1, j, k + 1]
                    + phi[i, j + 1, k + 1] - phi[i, j - 1, k - 1] - phi[i, j + 1, k - 1] + phi[i, j - 1, k + 1])
                out[i, j, k, 0] = 3.0 * gx
                out[i, j, k, 1] = 3.0 * gy
                out[i, j, k, 2] = 3.0 * gz


def _physical_sides(domain, bid):
    c = domain.block_coords(bid)
    low = np.array([not domain.periodicity[a] and c[a] == 0 for a in range(3)])
    high = np.array([not domain.periodicity[a] and c[a] == domain.blocks[a] - 1 for a in range(3)])
    return low, high


def isotropic_gradient(phi):
    """D3Q19-weighted gradient; one-sided differences at physical walls."""
    d = phi.domain
    exchange_ghosts(phi, "d3q19")
    out = Field(d, (3,))
    for bid in range(d.n_blocks):
        low, high = _physical_sides(d, bid)
        _gradient_kernel(phi[bid], out[bid], low, high)
    return out


@nb.njit(nogil=True, cache=True)
def _force_kernel(grad, origin, pos, radii, weights, sf, L, periodic, out):
    nx, ny, nz = grad.shape[:3]
    n = (nx, ny, nz)
    inv = 1.0 / sf
    norm = 1.0 / (sf * sf * sf)
    for p in range(pos.shape[0]):
        r = radii[p]
        r2 = r * r
        for sx in range(-1, 2):
            if sx != 0 and not periodic[0]:
                continue
            for sy in range(-1, 2):
                if sy != 0 and not periodic[1]:
                    continue
                for sz in range(-1, 2):
                    if sz != 0 and not periodic[2]:
                        continue
                    c = (pos[p, 0] + sx * L[0] - origin[0],
                         pos[p, 1] + sy * L[1] - origin[1],
                         pos[p, 2] + sz * L[2] - origin[2])
                    lo = np.empty(3, dtype=np.int64)
                    hi = np.empty(3, dtype=np.int64)
                    empty = False
                    for a in range(3):
                        lo[a] = max(1, int(math.floor(c[a] - r)))
                        hi[a] = min(n[a] - 1, int(math.floor(c[a] + r)) + 1)
                        if lo[a] >= hi[a]:
                            empty = True
                    if empty:
                        continue
                    for k in range(lo[2], hi[2]):
                        for j in range(lo[1], hi[1]):
                            for i in range(lo[0], hi[0]):
                                count = 0
                                for c3 in range(sf):
                                    z = k + (c3 + 0.5) * inv - c[2]
                                    for b in range(sf):
                                        y = j + (b + 0.5) * inv - c[1]
                                        for a in range(sf):
                                            x = i + (a + 0.5) * inv - c[0]
                                            if x * x + y * y + z * z < r2:
                                                count += 1
                                if count:
                                    frac = weights[p] * count * norm
                                    out[p, 0] -= grad[i, j, k, 0] * frac
                                    out[p, 1] -= grad[i, j, k, 1] * frac
                                    out[p, 2] -= grad[i, j, k, 2] * frac


def coulomb_force(phi, particles, subsampling, charges=None):
    """``-sum_b grad(Phi) * charge density`` per particle, in potential x charge units.

    With ``phi`` in units of the potential scale and ``charges`` in Coulomb
    the result times ``potential scale / cell size`` is the force in Newton.
    """
    d = phi.domain
    charges = particles.charges if charges is None else np.asarray(charges, dtype=float)
    weights = charges / (4.0 / 3.0 * np.pi * particles.radii**3)
    grad = isotropic_gradient(phi)
    L = np.array(d.global_cells, dtype=float)
    periodic = np.array(d.periodicity, dtype=np.bool_)
    parts = []
    for bid in range(d.n_blocks):
        origin = np.array(d.block_offset(bid), dtype=float) - d.ghost_width
        out = np.zeros((len(particles), 3))
        _force_kernel(grad[bid], origin, particles.positions, particles.radii, weights,
                      int(subsampling), L, periodic, out)
        parts.append(out)
    return ordered_sum(parts) if parts else np.zeros((len(particles), 3))


def charged_sphere_potential(r, charge, radius, permittivity):
    """Potential of a homogeneously charged sphere in free space."""
    r = np.asarray(r, dtype=float)
    k = charge / (4.0 * np.pi * permittivity)
    inside = k / (2.0 * radius) * (3.0 - (r / radius) ** 2)
    with np.errstate(divide="ignore"):
        outside = k / r
    return np.where(r < radius, inside, outside)
