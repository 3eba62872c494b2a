"""Exception types raised by drdyn.

Each precondition failure has its own class so callers (and the CLI exit-code
mapping) can tell them apart.
"""


class DrdynError(Exception):
    """Base class for all drdyn errors."""


class DomainViolation(DrdynError, ValueError):
    """A point or parameter lies outside an operation's domain.

    The CLI maps every subclass to exit code 65.
    """


class OriginNotProjectable(DomainViolation):
    """The sphere projection is multivalued at the origin."""


class LambdaOutOfRange(DomainViolation):
    pass


class DomainError(DomainViolation):
    """Point is outside the slab 0 < x_1 <= 1."""


class RegionError(DomainViolation):
    """Point is outside the open half-space x_1 > 0."""


class DimensionMismatch(DomainViolation):
    pass


class EmptySampleRegion(DrdynError):
    """No sample survived the exclusion constraint of an estimator."""


class InsufficientData(DrdynError):
    """An envelope cell has no supporting trajectory."""


class NoAdmissibleGain(DrdynError):
    """No candidate perturbation gain passed calibration.

    This is a reportable outcome rather than a bug; ``results`` holds the
    per-candidate diagnostics.
    """

    def __init__(self, message, results=None):
        super().__init__(message)
        self.results = results or []
