"""Exception types shared across the package.

Everything derives from TsbError (itself a ValueError) so callers can catch
broadly; the CLI maps TsbError subclasses onto its exit-code contract.
"""


class TsbError(ValueError):
    """Base class for all package-specific errors."""


class KindMismatch(TsbError):
    """Parameter object does not fit the experiment kind (wrong type/shape)."""


class UnsupportedKind(TsbError):
    """Operation is not defined for this experiment kind."""


class ConstraintViolation(TsbError):
    """Parameter leaves its admissible set ([eta,1-eta], [1/M,M], |f|<=M, spectrum in [1/L,L])."""


class LengthMismatch(TsbError):
    """Vector arguments disagree in length."""


class DomainError(TsbError):
    """Numeric argument outside the function's domain (e.g. psi at c*|lam| >= 1)."""


class QuadratureFailure(TsbError):
    """Numerical integration produced a non-finite value."""


class InsufficientGrid(TsbError):
    """Quadrature / density grid too coarse to be meaningful."""


class FactorizationFailure(TsbError):
    """Covariance factorization failed (matrix not positive definite)."""


class DegenerateHypotheses(TsbError):
    """Test requested for f0 = f1 (intrinsic distance zero)."""


class NonFiniteEstimate(TsbError):
    """Monte Carlo estimate blew up (reported per-point where possible)."""


class SvdFailure(TsbError):
    """Singular value decomposition failed to converge."""


class TooManyPieces(TsbError):
    """More change points requested than design points."""


class SupportTooLarge(TsbError):
    """Support size exceeds the ambient dimension."""


class EmptyCloud(TsbError):
    """Covering-number estimate requested for an empty point cloud."""


class UnnormalizedWeights(TsbError):
    """Model weights do not sum to one within tolerance."""


class IndexOutOfRange(TsbError):
    """Model index outside the truncated lattice."""


class StateSpaceTooLarge(TsbError):
    """Brute-force enumeration would exceed the state budget."""


class EmptyChain(TsbError):
    """Chain holds no recorded draws."""


class NonPositiveRisk(TsbError):
    """Risk values must be strictly positive for log-log slope fits."""


class NonFiniteLogPosterior(TsbError):
    """Log posterior evaluated to NaN/inf at a chain state."""


class ConfigError(TsbError):
    """Run configuration invalid (unknown field, missing seed, bad value)."""
