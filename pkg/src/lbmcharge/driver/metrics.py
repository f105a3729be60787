"""Validation and performance metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import UndefinedDragError
from ..particles import corrected_drag_force, volume_error


@dataclass
class DragMetrics:
    drag: float
    corrected_drag: float
    volume_error: float
    corrected_force: float


def drag_coefficient(force, mean_velocity, radius, viscosity, buoyancy=0.0, density=1.0):
    """``(F + F_p) / (6 pi rho nu u R)``, the drag normalised by Stokes drag."""
    denom = 6.0 * math.pi * density * viscosity * mean_velocity * radius
    if mean_velocity == 0.0 or denom == 0.0:
        raise UndefinedDragError("mean fluid velocity is zero; drag is undefined")
    return (force + buoyancy) / denom


def compute_drag_metrics(force, mean_velocity, radius, viscosity, acceleration, cells, density=1.0):
    """Drag, volume-corrected drag and mapping error of a fixed sphere in a
    periodic array driven by a body force ``acceleration`` (lattice units).

    The pressure-gradient share acting on the sphere volume is added back as
    ``rho g V``.
    """
    volume = 4.0 / 3.0 * math.pi * radius**3
    buoyancy = density * acceleration * volume
    f_cor = corrected_drag_force(force, cells, radius)
    return DragMetrics(
        drag=drag_coefficient(force, mean_velocity, radius, viscosity, buoyancy, density),
        corrected_drag=drag_coefficient(f_cor, mean_velocity, radius, viscosity, buoyancy, density),
        volume_error=volume_error(cells, radius),
        corrected_force=f_cor,
    )


def relative_error(value, reference):
    return (value - reference) / reference


@dataclass
class SteadyStateDetector:
    """Fires once the relative change between two samples drops below ``tolerance``."""

    tolerance: float = 1e-11
    max_steps: int = None
    history: list = field(default_factory=list)
    capped: bool = False

    def update(self, value, step=None):
        self.history.append(float(value))
        if self.max_steps is not None and step is not None and step >= self.max_steps:
            self.capped = True
            return True
        return self.converged()

    def converged(self):
        if len(self.history) < 2:
            return False
        a, b = self.history[-2], self.history[-1]
        if b == 0.0:
            return a == 0.0
        return abs((b - a) / b) < self.tolerance


def steady_state(history, tolerance=1e-11):
    """True when the last two samples differ by less than ``tolerance`` relative."""
    det = SteadyStateDetector(tolerance)
    det.history = list(history)
    return det.converged()


def potential_error(numerical, analytic):
    """Relative error field ``(numerical - analytic) / analytic`` and its norms.

    Returns ``(L2, inf)`` where the L2 norm is the root mean square over all
    cells and the maximum norm keeps the sign of the extreme entry.
    """
    e = (np.asarray(numerical) - analytic) / analytic
    rms = float(np.sqrt(np.mean(e * e)))
    extreme = float(e.flat[np.argmax(np.abs(e))])
    return rms, extreme


@dataclass
class Throughput:
    """Cell updates per second over a timed section."""

    cells: int
    fluid_cells: int
    steps: int
    seconds: float

    @property
    def mlups(self):
        return self.cells * self.steps / self.seconds / 1e6 if self.seconds > 0 else 0.0

    @property
    def mflups(self):
        return self.fluid_cells * self.steps / self.seconds / 1e6 if self.seconds > 0 else 0.0
