"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A model parameter is outside its physical domain."""


class InputError(ValueError):
    """Malformed call arguments: grids, channels, windows, shapes."""


class ConvergenceError(RuntimeError):
    """An integrator or fit failed to converge."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FormatError(ValueError):
    """A tag file could not be parsed.

    ``location`` is the 1-based line (CSV) or byte offset (binary).
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class OrderError(FormatError):
    """Timestamps in a tag stream are not monotone."""


class SeparationError(ValueError):
    """Two count distributions have no usable crossing for a threshold."""
