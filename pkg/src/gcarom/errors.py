"""Exception types shared across the package."""


class GcaError(Exception):
    """Base class for package errors."""


class ShapeError(GcaError, ValueError):
    """Operand shapes are incompatible."""


class MeshError(GcaError, ValueError):
    """Mesh or graph construction failed (dangling nodes, disconnected pieces)."""


class DataError(GcaError, ValueError):
    """Dataset files or arrays are inconsistent with their declared layout."""


class NumericalError(GcaError, ArithmeticError):
    """Training produced a non-finite loss."""


class CheckpointError(GcaError, ValueError):
    """Checkpoint header or payload is invalid."""
