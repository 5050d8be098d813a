"""Error types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical procedure failed beyond recovery (singular system,
    indefinite covariance, residual above tolerance after refinement).

    The CLI maps this to exit code 2; plain validation errors exit 1.
    """
