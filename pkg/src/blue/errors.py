"""
Error Types for the Multilevel BLUE Toolkit

Every failure the toolkit reports on purpose derives from ``BlueError`` so the
command line front end can map it to an exit code:

- ConfigError: the run configuration is malformed (exit code 1)
- NumericalFailure: a matrix is singular or not positive definite, or the
  allocation solver did not converge (exit code 2)
- InfeasibleTarget: a requested accuracy or bias vector cannot be reached with
  the available levels and groups (exit code 3)

Plain argument mistakes in library calls raise ``ValueError``.
"""

from typing import Any, Optional


class BlueError(Exception):
    """Base class for all deliberate toolkit failures."""

    tag = "error"


class ConfigError(BlueError):
    """
    A configuration document failed validation.

    Attributes:
        path (str): Dotted path of the offending key, e.g. ``family.rates``
    """

    tag = "config"

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NumericalFailure(BlueError):
    """
    A linear algebra step or the allocation solver failed.

    Attributes:
        best (Any): Best iterate reached before the failure, if any
    """

    tag = "numerical"

    def __init__(self, message: str, best: Optional[Any] = None):
        super().__init__(message)
        self.best = best


class InfeasibleTarget(BlueError):
    """The requested target cannot be met by any admissible configuration."""

    tag = "infeasible"
