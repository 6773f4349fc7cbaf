"""Error types shared across the package."""


class ValidationError(ValueError):
    """Invalid geometric or configuration input."""


class MeshingError(RuntimeError):
    """Triangulation could not satisfy its quality/conformity contract."""


class EigenSolveError(RuntimeError):
    """Eigenvalue solve failed; carries achieved residuals when available."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class InfeasibleBoundError(ValueError):
    """Abstract bound requested with B >= 1."""


class TransferError(RuntimeError):
    """Neumann transfer construction failed; names the offending center."""
