"""Exception types raised across the package."""


class SEMError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SEMError, ValueError):
    """Invalid user configuration (bad permutation, missing file, ...)."""


class DivergenceError(SEMError, FloatingPointError):
    """Numerical integration produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class InsufficientDataError(SEMError, ValueError):
    pass


class GridError(SEMError, ValueError):
    pass


class OrderError(SEMError, ValueError):
    """Requested derivative or kernel order outside the supported range."""


class SelectionError(SEMError, RuntimeError):
    """No admissible tuning parameter could be selected."""


class ShapeError(SEMError, ValueError):
    pass


class DegenerateError(SEMError, ValueError):
    """A normalising quantity is zero (e.g. zero-energy reference)."""


class CapabilityError(SEMError, ValueError):
    """Curves cannot supply the derivative order a problem needs."""


class ReplicateError(SEMError):
    """A replicate failed; carries its seed and whether the cause was numerical."""

    def __init__(self, seed, message, numeric=True):
        super().__init__(seed, message, numeric)
        self.seed = seed
        self.message = message
        self.numeric = numeric

    def __str__(self):
        return f"replicate with seed {self.seed}: {self.message}"
