"""Exception hierarchy shared by all solver components."""


class SimulationError(Exception):
    """Base class for every error raised by the engine."""

    exit_code = 1


class ConfigurationError(SimulationError, ValueError):
    """Invalid scenario, decomposition or boundary setup."""

    exit_code = 2


class NumericDivergenceError(SimulationError, ArithmeticError):
    """A field became non-finite.

    Carries the offending global cell and the time step so the failure can
    be located in the output.
    """

    exit_code = 3

    def __init__(self, message, cell=None, step=None):
        self.cell = None if cell is None else tuple(int(c) for c in cell)
        self.step = step
        where = []
        if self.cell is not None:
            where.append(f"cell {self.cell}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SolverError(SimulationError, ArithmeticError):
    """Linear solver breakdown or divergence."""

    exit_code = 3


class SingularOperatorError(SolverError):
    def __init__(self, message, cell=None):
        self.cell = None if cell is None else tuple(int(c) for c in cell)
        if self.cell is not None:
            message = f"{message} at cell {self.cell}"
        super().__init__(message)


class StabilityError(SimulationError):
    """Particle displacement per step exceeds the resolved-coupling limit."""

    exit_code = 3


class UndefinedDragError(SimulationError, ZeroDivisionError):
    exit_code = 3
