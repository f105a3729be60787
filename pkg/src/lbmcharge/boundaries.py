"""Flag-driven boundary handling for the lattice Boltzmann field.

Every non-fluid cell next to the fluid carries a boundary-condition id (for
physical faces and static obstacles) or a particle owner (for moving bodies).
Before each stream-collide sweep the populations that fluid cells will pull
out of those cells are written, so the condition is fulfilled while
streaming.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import ConfigurationError
from .grid import AXES, FLUID, NEAR_BC, NON_BC, Field, FlagField, exchange_ghosts

BOUNDARY = np.uint8(1 << 2)
OBSTACLE = np.uint8(1 << 3)

NOSLIP, VELOCITY, PRESSURE, FREESLIP = 1, 2, 3, 4
KINDS = {"noslip": NOSLIP, "velocity": VELOCITY, "pressure": PRESSURE, "freeslip": FREESLIP}
# Where faces of different kinds meet at an edge the stronger condition wins.
PRIORITY = {NOSLIP: 4, VELOCITY: 3, PRESSURE: 2, FREESLIP: 1}

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")


def face_axis(face):
    if face not in FACES:
        raise ConfigurationError(f"unknown face {face!r}")
    return AXES.index(face[0]), (1 if face[1] == "+" else 0)


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str = "noslip"
    velocity: tuple = (0.0, 0.0, 0.0)
    density: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown boundary kind {self.kind!r}")
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if self.kind == "pressure" and not self.density > 0:
            raise ConfigurationError("pressure boundary needs a positive density")


@dataclass(frozen=True)
class Patch:
    """A condition on a rectangle of one face.

    ``lo``/``hi`` are half-open global cell ranges along the two tangential
    axes (in x, y, z order); omitted means the whole face.
    """

    face: str
    condition: BoundaryCondition
    lo: tuple = None
    hi: tuple = None


@dataclass(frozen=True)
class Obstacle:
    """Static box of cells ``[lo, hi)`` treated as a boundary (e.g. a beam)."""

    lo: tuple
    hi: tuple
    condition: BoundaryCondition = field(default_factory=BoundaryCondition)


def _tangential(axis):
    return [a for a in range(3) if a != axis]


def face_coverage(domain, patches):
    """Patch index per face cell; raises unless coverage is exact."""
    maps = {}
    for face in FACES:
        axis, _ = face_axis(face)
        if domain.periodicity[axis]:
            continue
        t = _tangential(axis)
        shape = tuple(domain.global_cells[a] for a in t)
        maps[face] = np.full(shape, -1, dtype=np.int64)
    for idx, p in enumerate(patches):
        axis, _ = face_axis(p.face)
        if domain.periodicity[axis]:
            raise ConfigurationError(f"patch on periodic face {p.face}")
        m = maps[p.face]
        lo = (0, 0) if p.lo is None else tuple(p.lo)
        hi = m.shape if p.hi is None else tuple(p.hi)
        for d in range(2):
            if not 0 <= lo[d] < hi[d] <= m.shape[d]:
                raise ConfigurationError(f"patch on {p.face} outside the face: {lo}..{hi}")
        region = m[lo[0] : hi[0], lo[1] : hi[1]]
        if (region >= 0).any():
            raise ConfigurationError(f"overlapping patches on face {p.face}")
        region[...] = idx
    for face, m in maps.items():
        if (m < 0).any():
            miss = tuple(int(v) for v in np.argwhere(m < 0)[0])
            raise ConfigurationError(f"face {face} has no boundary condition at {miss}")
    return maps


class LbmBoundaries:
    """Boundary ids, condition table and fluid flags for one lattice."""

    def __init__(self, domain, patches=(), obstacles=()):
        self.domain = domain
        self.patches = tuple(patches)
        self.obstacles = tuple(obstacles)
        conditions = [p.condition for p in self.patches] + [o.condition for o in self.obstacles]
        for o in self.obstacles:
            if o.condition.kind not in ("noslip", "velocity"):
                raise ConfigurationError("static obstacles support noslip or velocity only")
        n = len(conditions)
        if n > 254:
            raise ConfigurationError("too many boundary patches")
        self.kinds = np.zeros(n + 1, dtype=np.int64)
        self.velocities = np.zeros((n + 1, 3))
        self.densities = np.ones(n + 1)
        for i, c in enumerate(conditions, start=1):
            self.kinds[i] = KINDS[c.kind]
            self.velocities[i] = c.velocity
            self.densities[i] = c.density
        self.bc_id = Field(domain, (), np.uint8, 0)
        self.flags = FlagField(domain)
        self.static = FlagField(domain)
        self._build(face_coverage(domain, self.patches))

    def physical_sides(self, bid):
        """Booleans ``(low, high)`` per axis: does the block touch a wall there."""
        c = self.domain.block_coords(bid)
        low = np.zeros(3, dtype=np.bool_)
        high = np.zeros(3, dtype=np.bool_)
        for a in range(3):
            if not self.domain.periodicity[a]:
                low[a] = c[a] == 0
                high[a] = c[a] == self.domain.blocks[a] - 1
        return low, high

    def _build(self, coverage):
        d = self.domain
        n = d.block_cells
        for bid in range(d.n_blocks):
            off = d.block_offset(bid)
            ids = self.bc_id[bid]
            prio = np.zeros(d.padded_shape, dtype=np.int64)
            coords = [np.arange(off[a] - 1, off[a] + n[a] + 1) for a in range(3)]
            low, high = self.physical_sides(bid)
            for face, m in coverage.items():
                axis, side = face_axis(face)
                if not (high[axis] if side else low[axis]):
                    continue
                t = _tangential(axis)
                slab = [slice(None)] * 3
                slab[axis] = n[axis] + 1 if side else 0
                ia = np.clip(coords[t[0]], 0, d.global_cells[t[0]] - 1)
                ib = np.clip(coords[t[1]], 0, d.global_cells[t[1]] - 1)
                pid = m[np.ix_(ia, ib)] + 1
                kinds = self.kinds[pid]
                pr = np.vectorize(PRIORITY.get)(kinds)
                cur_ids = ids[tuple(slab)]
                cur_pr = prio[tuple(slab)]
                take = pr > cur_pr
                cur_ids[take] = pid[take]
                cur_pr[take] = pr[take]
            first = len(self.patches) + 1
            for k, o in enumerate(self.obstacles):
                sl = []
                for a in range(3):
                    lo = max(o.lo[a], off[a] - 1) - (off[a] - 1)
                    hi = min(o.hi[a], off[a] + n[a] + 1) - (off[a] - 1)
                    sl.append(slice(lo, max(lo, hi)))
                ids[tuple(sl)] = first + k
            static = self.static[bid]
            static[...] = np.where(ids > 0, BOUNDARY, 0).astype(np.uint8)
        self.refresh(None)

    def refresh(self, obstacle_owner=None):
        """Recompute fluid/nearBC flags from static boundaries and bodies."""
        for bid in range(self.domain.n_blocks):
            f = self.flags[bid]
            f[...] = self.static[bid]
            if obstacle_owner is not None:
                moving = (obstacle_owner[bid] >= 0) & (f == 0)
                f[moving] = OBSTACLE
            f[f == 0] = NON_BC
            mark_near_boundary(f)
        return self.flags

    def apply(self, pdfs, workers, particles=None, owner=None):
        """Write boundary populations into the source array of ``pdfs``."""
        d = self.domain
        L = np.array(d.global_cells, dtype=float)
        periodic = np.array(d.periodicity, dtype=np.bool_)
        if particles is None or owner is None:
            pos = vel = omega = np.zeros((0, 3))
        else:
            pos, vel, omega = particles.positions, particles.velocities, particles.omegas

        def sweep(bid):
            low, high = self.physical_sides(bid)
            origin = np.array(d.block_offset(bid), dtype=float) - 1.0
            own = owner[bid] if owner is not None else _NO_OWNER
            apply_kernel(
                pdfs.src[bid], self.flags[bid], self.bc_id[bid], own,
                self.kinds, self.velocities, self.densities,
                pos, vel, omega, origin, L, periodic, low, high,
            )

        workers.map(sweep)


_NO_OWNER = np.full((1, 1, 1), -1, dtype=np.int32)


@nb.njit(nogil=True, cache=True)
def mark_near_boundary(flags):
    """Split fluid cells into nonBC and nearBC by their D3Q19 neighbourhood."""
    nx, ny, nz = flags.shape
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                if not (flags[i, j, k] & (NON_BC | NEAR_BC)):
                    continue
                near = False
                for dk in range(-1, 2):
                    for dj in range(-1, 2):
                        for di in range(-1, 2):
                            if abs(di) + abs(dj) + abs(dk) == 3:
                                continue
                            if not (flags[i + di, j + dj, k + dk] & (NON_BC | NEAR_BC)):
                                near = True
                flags[i, j, k] = NEAR_BC if near else NON_BC


@nb.njit(nogil=True, cache=True)
def _wrap(d, length, periodic):
    if periodic:
        if d >= 0.5 * length:
            d -= length
        elif d < -0.5 * length:
            d += length
    return d


@nb.njit(nogil=True, cache=True)
def surface_velocity_at(p, x, y, z, pos, vel, omega, L, periodic):
    rx = _wrap(x - pos[p, 0], L[0], periodic[0])
    ry = _wrap(y - pos[p, 1], L[1], periodic[1])
    rz = _wrap(z - pos[p, 2], L[2], periodic[2])
    ux = vel[p, 0] + omega[p, 1] * rz - omega[p, 2] * ry
    uy = vel[p, 1] + omega[p, 2] * rx - omega[p, 0] * rz
    uz = vel[p, 2] + omega[p, 0] * ry - omega[p, 1] * rx
    return ux, uy, uz


@nb.njit(nogil=True, cache=True)
def apply_kernel(src, flags, bc_id, owner, kinds, wall_vel, wall_rho,
                 pos, vel, omega, origin, L, periodic, low, high):
    c = np.array(
        [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
         [1, 1, 0], [-1, -1, 0], [1, -1, 0], [-1, 1, 0], [1, 0, 1], [-1, 0, -1],
         [1, 0, -1], [-1, 0, 1], [0, 1, 1], [0, -1, -1], [0, 1, -1], [0, -1, 1]]
    )
    cs2 = 1.0 / 3.0
    nx, ny, nz = flags.shape
    n = (nx, ny, nz)
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                if not (flags[i, j, k] & NEAR_BC):
                    continue
                axis = 0.0
                for q in range(1, 7):
                    axis += src[i, j, k, q]
                diag = 0.0
                for q in range(7, 19):
                    diag += src[i, j, k, q]
                rho = src[i, j, k, 0] + (axis + diag)
                for q in range(1, 19):
                    si = i - c[q, 0]
                    sj = j - c[q, 1]
                    sk = k - c[q, 2]
                    fs = flags[si, sj, sk]
                    if fs & (NON_BC | NEAR_BC):
                        continue
                    qb = q + 1 if q % 2 == 1 else q - 1
                    wq = 1.0 / 18.0 if q < 7 else 1.0 / 36.0
                    if fs & OBSTACLE:
                        p = owner[si, sj, sk]
                        mx = origin[0] + i + 0.5 - 0.5 * c[q, 0]
                        my = origin[1] + j + 0.5 - 0.5 * c[q, 1]
                        mz = origin[2] + k + 0.5 - 0.5 * c[q, 2]
                        ux, uy, uz = surface_velocity_at(p, mx, my, mz, pos, vel, omega, L, periodic)
                        cu = c[q, 0] * ux + c[q, 1] * uy + c[q, 2] * uz
                        src[si, sj, sk, q] = src[i, j, k, qb] + 2.0 * wq * rho * cu / cs2
                        continue
                    b = bc_id[si, sj, sk]
                    kind = kinds[b]
                    if kind == 1:
                        src[si, sj, sk, q] = src[i, j, k, qb]
                    elif kind == 2:
                        cu = c[q, 0] * wall_vel[b, 0] + c[q, 1] * wall_vel[b, 1] + c[q, 2] * wall_vel[b, 2]
                        src[si, sj, sk, q] = src[i, j, k, qb] + 2.0 * wq * rho * cu / cs2
                    elif kind == 3:
                        ux = 0.0
                        uy = 0.0
                        uz = 0.0
                        for r in range(1, 19):
                            fr = src[i, j, k, r]
                            ux += c[r, 0] * fr
                            uy += c[r, 1] * fr
                            uz += c[r, 2] * fr
                        cu = c[q, 0] * ux + c[q, 1] * uy + c[q, 2] * uz
                        usq = ux * ux + uy * uy + uz * uz
                        src[si, sj, sk, q] = -src[i, j, k, qb] + 2.0 * wq * wall_rho[b] * (
                            1.0 + cu * cu / (2 * cs2 * cs2) - usq / (2 * cs2)
                        )
                    else:
                        # specular reflection of the wall-normal components
                        s = (si, sj, sk)
                        ref = np.zeros(3, dtype=np.int64)
                        y = np.array([i, j, k])
                        for a in range(3):
                            crossed = (s[a] == 0 and low[a]) or (s[a] == n[a] - 1 and high[a])
                            if crossed:
                                ref[a] = -c[q, a]
                            else:
                                ref[a] = c[q, a]
                                y[a] -= c[q, a]
                        r = 0
                        for t in range(19):
                            if c[t, 0] == ref[0] and c[t, 1] == ref[1] and c[t, 2] == ref[2]:
                                r = t
                        if flags[y[0], y[1], y[2]] & (NON_BC | NEAR_BC):
                            src[si, sj, sk, q] = src[y[0], y[1], y[2], r]
                        else:
                            src[si, sj, sk, q] = src[i, j, k, qb]


def exchange_flags(flags):
    return exchange_ghosts(flags, "d3q19")
