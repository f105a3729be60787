"""Rigid homogeneous charged spheres coupled to the lattice.

All state here is in lattice units. A sphere covers every cell whose center
lies strictly inside it; covered cells are moving obstacles for the fluid.
The hydrodynamic force follows from the momentum exchanged by populations
bounced back at the obstacle surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .boundaries import BOUNDARY, OBSTACLE, surface_velocity_at
from .errors import ConfigurationError, StabilityError
from .grid import FLUID, NEAR_BC, Field, exchange_ghosts, ordered_sum


@dataclass
class SphereParticle:
    id: int
    position: np.ndarray
    radius: float
    density: float = 1.0
    charge: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fixed: bool = False

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).copy()
        self.velocity = np.asarray(self.velocity, dtype=float).copy()
        self.omega = np.asarray(self.omega, dtype=float).copy()
        if not self.radius > 0:
            raise ConfigurationError(f"particle {self.id}: radius must be positive")
        if not self.density > 0:
            raise ConfigurationError(f"particle {self.id}: density must be positive")

    @property
    def volume(self):
        return 4.0 / 3.0 * math.pi * self.radius**3

    @property
    def mass(self):
        return self.density * self.volume

    @property
    def inertia(self):
        return 0.4 * self.mass * self.radius**2


class ParticleSystem:
    """Struct-of-arrays view of all spheres, sorted by id."""

    def __init__(self, particles=()):
        particles = sorted(particles, key=lambda p: p.id)
        ids = [p.id for p in particles]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate particle ids")
        n = len(particles)
        self.ids = np.array(ids, dtype=np.int64)
        self.positions = np.array([p.position for p in particles], dtype=float).reshape(n, 3)
        self.velocities = np.array([p.velocity for p in particles], dtype=float).reshape(n, 3)
        self.omegas = np.array([p.omega for p in particles], dtype=float).reshape(n, 3)
        self.radii = np.array([p.radius for p in particles], dtype=float)
        self.densities = np.array([p.density for p in particles], dtype=float)
        self.charges = np.array([p.charge for p in particles], dtype=float)
        self.fixed = np.array([p.fixed for p in particles], dtype=np.bool_)
        self.forces = np.zeros((n, 3))
        self.torques = np.zeros((n, 3))

    def __len__(self):
        return len(self.ids)

    @property
    def volumes(self):
        return 4.0 / 3.0 * np.pi * self.radii**3

    @property
    def masses(self):
        return self.densities * self.volumes

    @property
    def inertias(self):
        return 0.4 * self.masses * self.radii**2

    def particle(self, index):
        return SphereParticle(
            int(self.ids[index]), self.positions[index], float(self.radii[index]),
            float(self.densities[index]), float(self.charges[index]),
            self.velocities[index], self.omegas[index], bool(self.fixed[index]),
        )

    def add(self, particle):
        rest = [self.particle(i) for i in range(len(self))]
        other = ParticleSystem(rest + [particle])
        self.__dict__.update(other.__dict__)

    def remove(self, mask):
        keep = ~np.asarray(mask, dtype=bool)
        for name in ("ids", "positions", "velocities", "omegas", "radii", "densities",
                     "charges", "fixed", "forces", "torques"):
            setattr(self, name, getattr(self, name)[keep])

    def clear_accumulators(self):
        self.forces[...] = 0.0
        self.torques[...] = 0.0


def surface_velocity(particle, point):
    """Rigid-body velocity of ``particle`` at ``point``."""
    r = np.asarray(point, dtype=float) - particle.position
    return particle.velocity + np.cross(particle.omega, r)


@nb.njit(nogil=True, cache=True)
def map_kernel(owner, static, origin, pos, radii, L, periodic):
    """Owner of every padded cell whose center is strictly inside a sphere."""
    nx, ny, nz = owner.shape
    n = (nx, ny, nz)
    owner[...] = -1
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
                    cx = pos[p, 0] + sx * L[0] - origin[0]
                    cy = pos[p, 1] + sy * L[1] - origin[1]
                    cz = pos[p, 2] + sz * L[2] - origin[2]
                    lo = np.empty(3, dtype=np.int64)
                    hi = np.empty(3, dtype=np.int64)
                    cc = (cx, cy, cz)
                    empty = False
                    for a in range(3):
                        lo[a] = max(0, int(math.floor(cc[a] - r - 0.5)))
                        hi[a] = min(n[a], int(math.ceil(cc[a] + r + 0.5)) + 1)
                        if lo[a] >= hi[a]:
                            empty = True
                    if empty:
                        continue
                    for k in range(lo[2], hi[2]):
                        dz = k + 0.5 - cz
                        for j in range(lo[1], hi[1]):
                            dy = j + 0.5 - cy
                            for i in range(lo[0], hi[0]):
                                dx = i + 0.5 - cx
                                if dx * dx + dy * dy + dz * dz < r2:
                                    if owner[i, j, k] < 0 and not (static[i, j, k] & BOUNDARY):
                                        owner[i, j, k] = p


@nb.njit(nogil=True, cache=True)
def reconstruct_kernel(src, owner, prev_owner, static, origin, pos, vel, omega, L, periodic):
    """Equilibrium at the body velocity in cells the bodies just left."""
    c = np.array(
        [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
         [1, 1, 0], [-1, -1, 0], [1, -1, 0], [-1, 1, 0], [1, 0, 1], [-1, 0, -1],
         [1, 0, -1], [-1, 0, 1], [0, 1, 1], [0, -1, -1], [0, 1, -1], [0, -1, 1]]
    )
    cs2 = 1.0 / 3.0
    nx, ny, nz = owner.shape
    count = 0
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                p = prev_owner[i, j, k]
                if p < 0 or owner[i, j, k] >= 0 or (static[i, j, k] & BOUNDARY):
                    continue
                x = origin[0] + i + 0.5
                y = origin[1] + j + 0.5
                z = origin[2] + k + 0.5
                ux, uy, uz = surface_velocity_at(p, x, y, z, pos, vel, omega, L, periodic)
                usq = ux * ux + uy * uy + uz * uz
                for q in range(19):
                    wq = 1.0 / 3.0 if q == 0 else (1.0 / 18.0 if q < 7 else 1.0 / 36.0)
                    cu = c[q, 0] * ux + c[q, 1] * uy + c[q, 2] * uz
                    src[i, j, k, q] = wq * (1.0 - usq / (2 * cs2) + cu * cu / (2 * cs2 * cs2)) + wq * cu / cs2
                count += 1
    return count


@nb.njit(nogil=True, cache=True)
def momentum_exchange_kernel(pdf, flags, owner, origin, pos, vel, omega, L, periodic, force, torque):
    """Force and midpoint torque from populations hitting moving obstacles.

    Populations enter relative to the reference density ``w_q * rho_0``. On a
    body surrounded by fluid that term cancels link by link; on a body
    touching a wall it would leave the uncovered reference pressure of the
    contact patch as a spurious pull toward the wall.
    """
    c = np.array(
        [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
         [1, 1, 0], [-1, -1, 0], [1, -1, 0], [-1, 1, 0], [1, 0, 1], [-1, 0, -1],
         [1, 0, -1], [-1, 0, 1], [0, 1, 1], [0, -1, -1], [0, 1, -1], [0, -1, 1]]
    )
    cs2 = 1.0 / 3.0
    nx, ny, nz = flags.shape
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                if not (flags[i, j, k] & NEAR_BC):
                    continue
                axis = 0.0
                for q in range(1, 7):
                    axis += pdf[i, j, k, q]
                diag = 0.0
                for q in range(7, 19):
                    diag += pdf[i, j, k, q]
                rho = pdf[i, j, k, 0] + (axis + diag)
                for q in range(1, 19):
                    si = i + c[q, 0]
                    sj = j + c[q, 1]
                    sk = k + c[q, 2]
                    if not (flags[si, sj, sk] & OBSTACLE):
                        continue
                    p = owner[si, sj, sk]
                    wq = 1.0 / 18.0 if q < 7 else 1.0 / 36.0
                    mx = origin[0] + i + 0.5 + 0.5 * c[q, 0]
                    my = origin[1] + j + 0.5 + 0.5 * c[q, 1]
                    mz = origin[2] + k + 0.5 + 0.5 * c[q, 2]
                    ux, uy, uz = surface_velocity_at(p, mx, my, mz, pos, vel, omega, L, periodic)
                    cu = c[q, 0] * ux + c[q, 1] * uy + c[q, 2] * uz
                    m = 2.0 * (pdf[i, j, k, q] - wq) - 2.0 * wq * rho * cu / cs2
                    fx = c[q, 0] * m
                    fy = c[q, 1] * m
                    fz = c[q, 2] * m
                    rx = mx - pos[p, 0]
                    ry = my - pos[p, 1]
                    rz = mz - pos[p, 2]
                    if periodic[0]:
                        rx -= L[0] * np.floor(rx / L[0] + 0.5)
                    if periodic[1]:
                        ry -= L[1] * np.floor(ry / L[1] + 0.5)
                    if periodic[2]:
                        rz -= L[2] * np.floor(rz / L[2] + 0.5)
                    force[p, 0] += fx
                    force[p, 1] += fy
                    force[p, 2] += fz
                    torque[p, 0] += ry * fz - rz * fy
                    torque[p, 1] += rz * fx - rx * fz
                    torque[p, 2] += rx * fy - ry * fx


class ObstacleMap:
    """Per-cell owning particle (index into the system, -1 for none)."""

    def __init__(self, domain):
        self.domain = domain
        self.owner = Field(domain, (), np.int32, -1)
        self.previous = Field(domain, (), np.int32, -1)
        self.covered = 0
        self.uncovered = 0

    def _geometry(self, bid):
        d = self.domain
        origin = np.array(d.block_offset(bid), dtype=float) - d.ghost_width
        return origin, np.array(d.global_cells, dtype=float), np.array(d.periodicity, dtype=np.bool_)

    def map(self, particles, static, workers=None):
        """Refresh ownership; returns ``(covered, uncovered)`` cell counts."""
        self.owner, self.previous = self.previous, self.owner
        pos = particles.positions
        radii = particles.radii

        def sweep(bid):
            origin, L, periodic = self._geometry(bid)
            map_kernel(self.owner[bid], static[bid], origin, pos, radii, L, periodic)
            inner = self.owner.interior(bid)
            before = self.previous.interior(bid)
            return (int(np.count_nonzero((inner >= 0) & (before < 0))),
                    int(np.count_nonzero((inner < 0) & (before >= 0))))

        results = [sweep(b) for b in range(self.domain.n_blocks)] if workers is None else workers.map(sweep)
        self.covered = sum(r[0] for r in results)
        self.uncovered = sum(r[1] for r in results)
        return self.covered, self.uncovered

    def reconstruct(self, pdfs, particles, static, previous_state=None):
        """Refill uncovered cells with equilibrium at the departing body's velocity.

        ``previous_state`` (positions, velocities, omegas) describes the body
        the cell was uncovered by; defaults to the current state.
        """
        pos, vel, omega = previous_state or (particles.positions, particles.velocities, particles.omegas)
        total = 0
        for bid in range(self.domain.n_blocks):
            origin, L, periodic = self._geometry(bid)
            total += reconstruct_kernel(
                pdfs.src[bid], self.owner[bid], self.previous[bid], static[bid],
                origin, pos, vel, omega, L, periodic,
            )
        return total

    def cell_counts(self, n_particles):
        counts = np.zeros(n_particles, dtype=np.int64)
        for bid in range(self.domain.n_blocks):
            own = self.owner.interior(bid)
            ids = own[own >= 0]
            counts += np.bincount(ids, minlength=n_particles)[:n_particles]
        return counts


def hydrodynamic_force(pdfs, flags, obstacles, particles, workers):
    """Momentum-exchange force and torque per particle, summed in block order."""
    d = pdfs.domain
    n = len(particles)

    def sweep(bid):
        origin, L, periodic = obstacles._geometry(bid)
        f = np.zeros((n, 3))
        t = np.zeros((n, 3))
        momentum_exchange_kernel(
            pdfs.src[bid], flags[bid], obstacles.owner[bid], origin,
            particles.positions, particles.velocities, particles.omegas, L, periodic, f, t,
        )
        return f, t

    parts = workers.map(sweep)
    force = ordered_sum([p[0] for p in parts]) if d.n_blocks else np.zeros((n, 3))
    torque = ordered_sum([p[1] for p in parts]) if d.n_blocks else np.zeros((n, 3))
    return np.asarray(force).reshape(n, 3), np.asarray(torque).reshape(n, 3)


def integrate_bodies(particles, dt=1.0, external=None, max_displacement=0.5):
    """Semi-implicit Euler step; clears the accumulators."""
    forces = particles.forces.copy()
    if external is not None:
        forces += external
    free = ~particles.fixed
    m = particles.masses[:, None]
    inertia = particles.inertias[:, None]
    v_new = particles.velocities + forces / m * dt
    step = np.linalg.norm(v_new * dt, axis=1)
    bad = free & (step > max_displacement)
    if bad.any():
        i = int(np.argmax(np.where(bad, step, -1)))
        raise StabilityError(
            f"particle {particles.ids[i]} moves {step[i]:.3g} cells in one step "
            f"(limit {max_displacement})"
        )
    particles.velocities[free] = v_new[free]
    particles.positions[free] += particles.velocities[free] * dt
    particles.omegas[free] += (particles.torques / inertia * dt)[free]
    particles.clear_accumulators()


@dataclass(frozen=True)
class Wall:
    """Plane ``x[axis] = position``; ``normal`` (+1/-1) points into the fluid."""

    axis: int
    position: float
    normal: int


def walls_of(domain):
    walls = []
    for a in range(3):
        if not domain.periodicity[a]:
            walls.append(Wall(a, 0.0, 1))
            walls.append(Wall(a, float(domain.global_cells[a]), -1))
    return walls


def _inv_mass(particles, i):
    return 0.0 if particles.fixed[i] else 1.0 / particles.masses[i]


def resolve_contacts(particles, walls=(), restitution=0.0, lengths=None, periodic=(False, False, False)):
    """Separate overlapping spheres and reflect their normal approach velocity."""
    n = len(particles)
    pos, vel = particles.positions, particles.velocities
    for a in range(n):
        for b in range(a + 1, n):
            d = pos[b] - pos[a]
            if lengths is not None:
                for ax in range(3):
                    if periodic[ax]:
                        d[ax] -= lengths[ax] * np.floor(d[ax] / lengths[ax] + 0.5)
            dist = float(np.linalg.norm(d))
            overlap = particles.radii[a] + particles.radii[b] - dist
            if overlap <= 0 or dist == 0.0:
                continue
            normal = d / dist
            wa, wb = _inv_mass(particles, a), _inv_mass(particles, b)
            if wa + wb == 0.0:
                continue
            pos[a] -= normal * overlap * wa / (wa + wb)
            pos[b] += normal * overlap * wb / (wa + wb)
            vn = float((vel[b] - vel[a]) @ normal)
            if vn < 0:
                impulse = -(1.0 + restitution) * vn / (wa + wb)
                vel[a] -= impulse * wa * normal
                vel[b] += impulse * wb * normal
    for w in walls:
        for a in range(n):
            if particles.fixed[a]:
                continue
            gap = (pos[a, w.axis] - w.position) * w.normal - particles.radii[a]
            if gap >= 0:
                continue
            pos[a, w.axis] -= gap * w.normal
            vn = vel[a, w.axis] * w.normal
            if vn < 0:
                vel[a, w.axis] = -restitution * vn * w.normal


def exchange_pdfs(pdfs):
    exchange_ghosts(pdfs.src, "d3q19")


def volume_error(cells, radius):
    """Relative error of a staircase volume against the exact sphere."""
    exact = 4.0 / 3.0 * math.pi * radius**3
    return (cells - exact) / exact


def corrected_drag_force(force, cells, radius):
    """Scale a drag force by the cube root of exact over mapped volume."""
    exact = 4.0 / 3.0 * math.pi * radius**3
    return (exact / cells) ** (1.0 / 3.0) * force


__all__ = [
    "FLUID", "ObstacleMap", "ParticleSystem", "SphereParticle", "Wall", "corrected_drag_force",
    "hydrodynamic_force", "integrate_bodies", "resolve_contacts", "surface_velocity",
    "volume_error", "walls_of",
]
