"""Exception hierarchy shared by the library and the CLI."""


class KMSLiftError(Exception):
    """Base class for all errors raised by kmslift."""


class ChartError(KMSLiftError):
    """Operation applied to an object living on the wrong chart."""


class EmbeddingError(KMSLiftError):
    """Region too large to embed in a single covering chart."""


class SingularityError(KMSLiftError, ValueError):
    """Evaluation point sits on a singular set of a kernel or series."""


class AnalyticityError(KMSLiftError):
    """Complex time shift outside the kernel's analyticity strip."""


class PrecisionError(KMSLiftError):
    """Quadrature failed its half-order convergence cross-check."""


class TruncationError(KMSLiftError):
    """Sampled series does not decay at the ends of its grid."""
