"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value; message names the offending field path."""


class MomentDivergenceError(ArithmeticError):
    """An exponential moment of the jump law is infinite at the requested exponent."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class FlowDivergenceError(RuntimeError):
    """The inner ODE solution left the admissible region (no global solution)."""


class SchemeDivergenceError(FlowDivergenceError):
    """Scheme state diverged; carries the first affected knot index."""

    def __init__(self, message, knot_index):
        super().__init__(message)
        self.knot_index = knot_index


class DivergenceAbortError(RuntimeError):
    """Too many Monte Carlo paths hit the divergence guard for a trustworthy estimate."""


class RateFitError(ValueError):
    """Not enough usable points for a log-log rate fit."""
