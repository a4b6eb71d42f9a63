"""Exception types shared across the package."""


class EpsrankError(Exception):
    """Base class for all epsrank-specific errors."""


class MatrixFormatError(EpsrankError):
    """A matrix file is malformed; carries the byte offset of the defect."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SpecFormatError(EpsrankError):
    """A model or scan configuration file failed strict parsing."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class LatentDomainError(EpsrankError, ValueError):
    """A latent vector lies outside the closed ball of radius R."""


class PartitionError(EpsrankError):
    """A latent product-domain point is claimed by zero or several pieces."""


class CapacityError(EpsrankError):
    """A requested object is too large to materialize."""


class CapabilityError(EpsrankError):
    """The requested operation is not supported for this model family."""


class NumericalError(EpsrankError):
    """A numerical routine failed to converge or broke an internal contract."""


class RetriesExhaustedError(EpsrankError):
    """Projection resampling never met the error target.

    ``best_error`` is the smallest measured error over all sampled maps,
    ``tries`` the number of maps sampled.
    """

    def __init__(self, message, best_error, tries):
        super().__init__(message)
        self.best_error = best_error
        self.tries = tries
