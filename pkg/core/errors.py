"""
Exception hierarchy for the discrepancy-minimization toolkit.
"""

from typing import Optional
from pathlib import Path


class GdmError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GdmError, ValueError):
    """Invalid experiment configuration."""


class DatasetError(GdmError, ValueError):
    """A dataset file or in-memory sample violates the dataset contract."""

    def __init__(self, message: str, file: Optional[Path] = None, row: Optional[int] = None):
        self.file = file
        self.row = row
        self.reason = message
        location = ""
        if file is not None:
            location = f"{file}"
            if row is not None:
                location += f", row {row}"
            location += ": "
        super().__init__(f"{location}{message}")


class KernelError(GdmError, ValueError):
    """Invalid kernel specification or incompatible point sets."""


class QPError(GdmError, ValueError):
    """Malformed quadratic program (shapes, asymmetric quadratic term)."""


class InfeasibleCenter(GdmError):
    """No interior point could be found for a surrogate ball."""


class UnboundedDirection(GdmError):
    """A sampling direction never leaves its ball group."""


class DegenerateDirection(GdmError):
    """Trust-region instance with no usable boundary direction."""


class EmptyValidation(GdmError):
    """Validation requested without labeled target points."""


class SolverStatusError(GdmError):
    """A solver result was used although it did not reach optimality."""

    def __init__(self, message: str, status: Optional[str] = None):
        self.status = status
        super().__init__(message)
