"""Exception types shared across the toolkit."""


class PlenoptiforgeError(Exception):
    """Base class for all toolkit-specific errors."""


class ValidationError(PlenoptiforgeError):
    """A domain type was constructed with out-of-range fields."""


class DesignGeometryError(PlenoptiforgeError):
    """Camera axial ordering or aperture invariants are violated."""


class NoFocusError(PlenoptiforgeError):
    """Traced rays do not converge to a real focus."""


class RayBlockedError(PlenoptiforgeError):
    """A required probe ray was clipped inside the system."""


class InsufficientClustersError(PlenoptiforgeError):
    """Fewer than two usable sensor clusters for disparity measurement."""


class DarkPixelError(PlenoptiforgeError):
    """No scene rays escape the camera from the probed pixel."""


class EmptyDofError(PlenoptiforgeError):
    """Depth-of-field computation produced an empty interval."""


class InfeasibleError(PlenoptiforgeError):
    """Design constraints admit no real Keplerian solution."""


class NoConvergenceError(PlenoptiforgeError):
    """Iterative refinement exhausted its iteration budget.

    The trace recorded up to the failure is available as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ShapeMismatchError(PlenoptiforgeError):
    """Sensor images of different pixel counts were combined."""


class DegenerateRegionError(PlenoptiforgeError):
    """Contrast requested for an all-equal region."""


class EdgeNotFoundError(PlenoptiforgeError):
    """No 50%-crossing found near the requested pixel index."""


class ParseError(PlenoptiforgeError):
    """Malformed prescription or design document."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaVersionError(PlenoptiforgeError):
    """Design document declares an unsupported schema version."""
