"""Exception types shared across the package."""


class DagtrackError(Exception):
    """Base class for all package errors."""


class ShapeError(DagtrackError, ValueError):
    """Operand shapes do not conform to the requested operation."""


class ConfigError(DagtrackError, ValueError):
    """Invalid or inconsistent configuration."""


class NonFiniteError(DagtrackError, ArithmeticError):
    """A computation produced NaN or infinity where a finite value is required."""


class StaleCacheError(DagtrackError, ValueError):
    """Cached activations do not match the inputs supplied to a backward pass."""


class SequenceError(DagtrackError, ValueError):
    """A sequence directory or image file is malformed."""


class SynthError(DagtrackError, ValueError):
    """A synthetic-sequence spec is infeasible."""


class CheckpointError(DagtrackError, ValueError):
    """A checkpoint file is malformed, truncated, or inconsistent."""


class TrackingError(DagtrackError, RuntimeError):
    """The tracking loop hit an unrecoverable condition."""
