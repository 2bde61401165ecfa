"""Exception types raised across the package."""

from sklearn.exceptions import NotFittedError

__all__ = [
    "ConfigError",
    "DegenerateColumnError",
    "DimensionError",
    "DivergenceError",
    "GraphError",
    "GridMismatchError",
    "NotFittedError",
    "SeedRunError",
    "TrajectoryBlowupError",
]


class ConfigError(ValueError):
    """Invalid configuration value or combination of values."""


class DimensionError(ValueError):
    """Array shapes do not match what an operation expects."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


class GraphError(ValueError):
    """Malformed causal graph (cycle, unknown node, duplicate edge)."""


class DegenerateColumnError(ValueError):
    """A column that must be standardized has zero variance."""


class GridMismatchError(ValueError):
    """A latent code was produced on a different timestep grid."""


class TrajectoryBlowupError(FloatingPointError):
    """A sampler trajectory left the finite range.

    Attributes
    ----------
    step : int
        Timestep index at which the first non-finite state appeared.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class SeedRunError(RuntimeError):
    """One seed of an ensemble failed; ``seed`` names it."""

    def __init__(self, message, seed):
        super().__init__(message)
        self.seed = seed
