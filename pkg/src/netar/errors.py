"""Exception types shared across the package.

DataError covers malformed inputs (files, panels, weight matrices);
NumericalError covers numerical breakdowns (singular systems, failed
eigensolves, degenerate likelihoods).  The CLI maps them to exit codes
2 and 3 respectively.
"""

from __future__ import annotations

__all__ = ["NetarError", "DataError", "NumericalError"]


class NetarError(Exception):
    """Base class for package errors."""


class DataError(NetarError):
    """Invalid or inconsistent input data."""


class NumericalError(NetarError):
    """Numerical failure during a computation."""
