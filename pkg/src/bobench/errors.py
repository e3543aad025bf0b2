"""Exception types raised by the numerical and modeling layers."""


class BobenchError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(BobenchError):
    """Cholesky factorization failed even at the jitter cap."""


class SingularTriangular(BobenchError):
    """Triangular solve hit a zero diagonal entry."""


class DimTooLarge(BobenchError):
    """Requested Sobol dimension exceeds the direction-number table and fallback is disabled."""


class NonFiniteEvaluation(BobenchError):
    """A function evaluation produced a non-finite value."""


class DomainError(BobenchError):
    """Argument outside the mathematical domain of the function."""


class NonFiniteLoss(BobenchError):
    """Network loss or activations overflowed to a non-finite value."""


class ZeroNorm(BobenchError):
    """Cosine similarity of a zero-norm vector is undefined."""


class FitFailed(BobenchError):
    """Model fitting produced no usable result."""


class AllDiverged(BobenchError):
    """Nearly all post-burn-in HMC proposals diverged."""


class NonFiniteState(BobenchError):
    """An SGHMC chain reached a non-finite state and was aborted."""


class DegenerateBounds(BobenchError):
    """Input bounds are empty or inverted."""


class OutOfBounds(BobenchError):
    """Query point lies outside the problem's input box."""


class BadDimension(BobenchError):
    """Problem dimension violates a structural constraint."""


class ConfigError(BobenchError):
    """Malformed or incomplete run configuration; message names the offending key."""
