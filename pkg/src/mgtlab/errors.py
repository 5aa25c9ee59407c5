"""Exception and warning types shared across the package."""


class MGTLabError(Exception):
    """Base class for all package-specific errors."""


class OverlapError(MGTLabError):
    """A measurement window intersects the interior domain."""


class EmptySetError(MGTLabError):
    """A required index set (interior, exterior, window) came out empty."""


class NonPositiveExponent(MGTLabError):
    """Negative fractional exponent requested (s = 0 is allowed and gives the identity)."""


class ShapeMismatch(MGTLabError):
    """Array shape incompatible with the grid or time axis."""


class SupportError(MGTLabError):
    """A field violates its declared support (e.g. exterior test data touching the interior)."""


class SingularStepMatrix(MGTLabError):
    """The implicit step matrix could not be factorized."""


class BlowUp(MGTLabError):
    """Trajectory norm exceeded the blow-up guard (1e12)."""


class NoContraction(MGTLabError):
    """Fixed-point residual ratios stayed >= 1 for three consecutive iterations.

    Signals that the input amplitude sits above the empirically contractive
    regime of the iteration.
    """


class MaxIterExceeded(MGTLabError):
    """Fixed-point iteration hit its iteration cap before reaching tolerance."""


class DimensionGate(MGTLabError):
    """Westervelt-type solve requested with s <= n/2."""


class OrderTooLarge(MGTLabError):
    """Partition / linearization order outside the supported range."""


class MissingDerivative(MGTLabError):
    """The derivative bank lacks an entry required by the partition sum."""


class DerivativeOrderUnsupported(MGTLabError):
    """The nonlinearity cannot supply a tau-derivative of the requested order."""


class EmptyBank(MGTLabError):
    """An input bank with no members was passed to a control/inversion routine."""


class IllConditioned(MGTLabError):
    """Assembled inversion map still has condition number > 1e12 after regularization."""


class SmallDivisor(MGTLabError):
    """Steered divisor field fell below its floor on the reconstruction mask."""


class ExponentOrderViolation(MGTLabError):
    """Homogeneity exponents not strictly increasing in (0, 1]."""


class NotTimeReversalInvariant(MGTLabError):
    """A potential flagged time-reversal invariant fails q(., t) = q(., T - t)."""


class ConfigError(MGTLabError):
    """Experiment configuration failed validation."""


class GrowthConditionWarning(UserWarning):
    """Advisory: nonlinearity powers violate the configured growth constraints."""
