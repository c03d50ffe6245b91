"""Incentive-learning agents in small social-dilemma games, plus manipulation modes."""
from arena.errors import ConfigError, ContractViolation, GradientCheckFailure

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractViolation", "GradientCheckFailure", "__version__"]
