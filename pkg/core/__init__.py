# Core package for the discrepancy-minimization toolkit

from core.errors import (
    ConfigError,
    DatasetError,
    DegenerateDirection,
    EmptyValidation,
    GdmError,
    InfeasibleCenter,
    KernelError,
    QPError,
    SolverStatusError,
    UnboundedDirection,
)

__all__ = [
    "ConfigError",
    "DatasetError",
    "DegenerateDirection",
    "EmptyValidation",
    "GdmError",
    "InfeasibleCenter",
    "KernelError",
    "QPError",
    "SolverStatusError",
    "UnboundedDirection",
]
