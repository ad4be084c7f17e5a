"""Exception types shared across the package."""


class OepgError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(OepgError, ValueError):
    """Matrix shapes are inconsistent with the requested operation."""


class SingularMatrix(OepgError, ValueError):
    """A matrix required to be invertible is singular or too ill-conditioned."""


class NotPositiveDefinite(OepgError, ValueError):
    """A matrix required to be symmetric positive definite is not."""


class NotStable(OepgError, ValueError):
    """A matrix required to be Hurwitz stable has an eigenvalue with
    nonnegative real part."""


class NotControllable(OepgError, ValueError):
    """The filter-state covariance is singular, so the filter is not
    controllable."""


class NotInformative(OepgError, ValueError):
    """The cross covariance between true and filter state is rank deficient."""


class RiccatiFailure(OepgError, RuntimeError):
    """The Riccati iteration diverged or produced a non-stabilizing solution."""


class AssumptionViolated(OepgError, ValueError):
    """A problem-instance assumption (stability, observability, noise
    definiteness) does not hold."""

    def __init__(self, assumption: str, detail: str = ""):
        self.assumption = assumption
        msg = f"assumption violated: {assumption}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class OutOfDomain(OepgError, ValueError):
    """A finite-difference stencil left the domain where the objective is
    finite."""


class GenerationExhausted(OepgError, RuntimeError):
    """Rejection sampling hit the retry limit without an accepted sample."""
