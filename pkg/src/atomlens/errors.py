"""Package-wide exception types.

The command-line driver maps these onto process exit codes: configuration
problems exit 2, resource refusals exit 3, numerical failures exit 4.
"""
from __future__ import annotations


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class MemoryBudgetError(RuntimeError):
    """A solve was refused because its estimated memory exceeds the budget."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to converge or to meet its tolerance."""
