"""Normal lubrication correction for sub-grid gaps.

The lattice resolves the squeeze flow between close surfaces only down to
about one cell. Below a cutoff gap the missing part of the singular Stokes
force is added pairwise, for sphere–sphere and sphere–wall pairs.

Sign convention: ``r_ab`` points from ``a`` to ``b`` and the relative normal
velocity is ``(v_b - v_a) . r_ab``, negative while the surfaces approach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class LubricationConfig:
    cutoff: float = 2.0 / 3.0
    min_gap: float = 0.01
    max_separation_velocity: float = 0.02
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.min_gap < self.cutoff:
            raise ConfigurationError(
                f"lubrication needs 0 < min_gap < cutoff, got {self.min_gap}, {self.cutoff}"
            )


def _limit(force, u_rel_n, cfg):
    mag = float(np.linalg.norm(force))
    if u_rel_n > cfg.max_separation_velocity and mag > 1.0:
        return force / mag * (1.0 + math.log10(mag))
    return force


def lubrication_magnitude(gap, u_rel_n, r_a, r_b, eta, cfg):
    """Signed force along ``r_ab`` acting on ``a``; ``r_b=inf`` for a wall."""
    if gap > cfg.cutoff or gap <= 0.0:
        return 0.0
    h = max(gap, cfg.min_gap)
    if math.isinf(r_b):
        prefactor = r_a * r_a
    else:
        prefactor = (r_a * r_b / (r_a + r_b)) ** 2
    return 6.0 * math.pi * eta * prefactor * (1.0 / h - 1.0 / cfg.cutoff) * u_rel_n


def pair_lubrication(xa, va, ra, xb, vb, rb, eta, cfg):
    """Correction force on sphere ``a`` from sphere ``b`` (``-F`` acts on ``b``)."""
    r = np.asarray(xb, dtype=float) - np.asarray(xa, dtype=float)
    dist = float(np.linalg.norm(r))
    if dist == 0.0:
        return np.zeros(3)
    n = r / dist
    u_rel_n = float((np.asarray(vb) - np.asarray(va)) @ n)
    mag = lubrication_magnitude(dist - ra - rb, u_rel_n, ra, rb, eta, cfg)
    return _limit(mag * n, u_rel_n, cfg) if mag else np.zeros(3)


def wall_lubrication(xa, va, ra, wall, eta, cfg, wall_velocity=(0.0, 0.0, 0.0)):
    """Correction force on sphere ``a`` from a plane wall."""
    n = np.zeros(3)
    n[wall.axis] = -wall.normal
    gap = (xa[wall.axis] - wall.position) * wall.normal - ra
    u_rel_n = float((np.asarray(wall_velocity) - np.asarray(va)) @ n)
    mag = lubrication_magnitude(gap, u_rel_n, ra, math.inf, eta, cfg)
    return _limit(mag * n, u_rel_n, cfg) if mag else np.zeros(3)


def normalised_force(force, radius, eta, speed):
    """Force scaled by ``4 R eta u``."""
    return force / (4.0 * radius * eta * speed)


def asymptotic_normalised_force(gap, r_a, r_b=math.inf):
    """Leading small-gap term ``(3 pi / 4) / (h lambda)`` of the normalised force."""
    curvature = 1.0 / (2.0 * r_a) + (0.0 if math.isinf(r_b) else 1.0 / (2.0 * r_b))
    return 0.75 * math.pi / (gap * curvature)


def lubrication_sweep(particles, walls, eta, cfg, lengths=None, periodic=(False, False, False)):
    """Add pair corrections to ``particles.forces``; every unordered pair once."""
    if not cfg.enabled:
        return
    n = len(particles)
    pos, vel, radii = particles.positions, particles.velocities, particles.radii
    reach = 2.0 * radii.max() + cfg.cutoff if n else 0.0
    for a in range(n):
        for b in range(a + 1, n):
            if particles.fixed[a] and particles.fixed[b]:
                continue
            xb = pos[b].copy()
            if lengths is not None:
                d = xb - pos[a]
                for ax in range(3):
                    if periodic[ax]:
                        d[ax] -= lengths[ax] * math.floor(d[ax] / lengths[ax] + 0.5)
                xb = pos[a] + d
            if np.abs(xb - pos[a]).max() > reach:
                continue
            f = pair_lubrication(pos[a], vel[a], radii[a], xb, vel[b], radii[b], eta, cfg)
            particles.forces[a] += f
            particles.forces[b] -= f
        if particles.fixed[a]:
            continue
        for w in walls:
            particles.forces[a] += wall_lubrication(pos[a], vel[a], radii[a], w, eta, cfg)
