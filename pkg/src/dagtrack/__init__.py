"""Neural visual tracking with four-direction lattice recurrence.

A from-scratch tracking toolkit: numpy forward/backward passes for
conv, pooling, fully-connected, and lattice DAG-RNN layers (numba
kernels with a pure-numpy fallback), multi-domain training with hard
negative mining, an online particle-sampling tracker with gated model
updates, benchmark-style metrics, and a small CLI.
"""

__version__ = "0.1.0"

from .backend import BACKEND, backend_name
from .errors import (
    CheckpointError,
    ConfigError,
    DagtrackError,
    NonFiniteError,
    SequenceError,
    ShapeError,
    StaleCacheError,
    SynthError,
    TrackingError,
)

__all__ = [
    "__version__",
    "BACKEND",
    "backend_name",
    "DagtrackError",
    "ShapeError",
    "ConfigError",
    "NonFiniteError",
    "StaleCacheError",
    "SequenceError",
    "SynthError",
    "CheckpointError",
    "TrackingError",
]
