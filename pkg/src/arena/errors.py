"""Exception types shared across the package.

Each maps onto one CLI exit code (see :mod:`arena.cli`).
"""


class ConfigError(ValueError):
    """Invalid configuration: shapes, ranges, unknown keys."""


class ContractViolation(RuntimeError):
    """A runtime precondition was broken (e.g. stepping a finished episode)."""


class GradientCheckFailure(AssertionError):
    """An analytic gradient disagreed with its finite-difference oracle."""
