"""Pulse-level simulation and optimal control of an optically driven qubit-cavity system."""

__version__ = "0.1.0"

from .errors import ConvergenceError, StepSizeError, ValidationError
from .hilbert import DensityMatrix, HilbertConfig, QuantumState
from .model import SystemParams
from .optlink import LinkParams
from .propagate import ControlPulse

__all__ = [
    "__version__",
    "ConvergenceError",
    "ControlPulse",
    "DensityMatrix",
    "HilbertConfig",
    "LinkParams",
    "QuantumState",
    "StepSizeError",
    "SystemParams",
    "ValidationError",
]
