"""Conversion between SI quantities and lattice units."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigurationError

ELEMENTARY_CHARGE = 1.602176634e-19
VACUUM_PERMITTIVITY = 8.8541878128e-12


@dataclass(frozen=True)
class UnitSystem:
    """Cell size ``dx`` [m], time step ``dt`` [s], reference density [kg/m^3]
    and reference potential [V]. Lattice potentials are stored divided by
    ``potential``.
    """

    dx: float = 1.0
    dt: float = 1.0
    density: float = 1.0
    potential: float = 1.0

    def __post_init__(self):
        for name in ("dx", "dt", "density", "potential"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"unit {name} must be positive")

    @classmethod
    def lattice(cls):
        return cls()

    @classmethod
    def from_viscosity(cls, dx, viscosity, tau, density=1.0, potential=1.0):
        """Choose ``dt`` so that the physical viscosity maps to ``(tau - 1/2) / 3``."""
        nu_l = (tau - 0.5) / 3.0
        return cls(dx, nu_l * dx * dx / viscosity, density, potential)

    @property
    def factors(self):
        dx, dt, rho = self.dx, self.dt, self.density
        return {
            "length": dx,
            "time": dt,
            "velocity": dx / dt,
            "acceleration": dx / dt**2,
            "viscosity": dx * dx / dt,
            "density": rho,
            "mass": rho * dx**3,
            "force": rho * dx**4 / dt**2,
            "torque": rho * dx**5 / dt**2,
            "potential": self.potential,
        }

    def to_lattice(self, value, kind):
        try:
            return value / self.factors[kind]
        except KeyError:
            raise ConfigurationError(f"unknown quantity kind {kind!r}") from None

    def to_physical(self, value, kind):
        try:
            return value * self.factors[kind]
        except KeyError:
            raise ConfigurationError(f"unknown quantity kind {kind!r}") from None

    def charge_to_rhs(self, charge, permittivity):
        """Scaled charge ``Q / (dx * eps * Phi_ref)``.

        Dividing by a sphere's lattice volume gives the right-hand side
        density of the lattice Poisson problem.
        """
        return charge / (self.dx * permittivity * self.potential)

    def coulomb_to_newton(self):
        """Factor turning ``sum grad(Phi_L) * Q * fraction / V_L`` into Newton."""
        return self.potential / self.dx
