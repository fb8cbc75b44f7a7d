"""Exception hierarchy.

Two families: :class:`ValidationError` for bad inputs or violated
preconditions (CLI exit code 2) and :class:`NumericalFailure` for
computations that ran but could not certify their result (exit code 3).
"""


class EhresmannLabError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(EhresmannLabError):
    pass


class NumericalFailure(EhresmannLabError):
    pass


# bundle-core
class OutOfOverlap(ValidationError):
    pass


class MissingTransition(ValidationError):
    pass


# connection-lift
class StartMismatch(ValidationError):
    pass


class NoChartContains(ValidationError):
    pass


class WeightSumViolation(NumericalFailure):
    pass


class UndefinedSummand(ValidationError):
    pass


class IncompleteLift(NumericalFailure):
    """A transport needed by a construction blew up or stopped early."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


# complete-construct
class SamplerBudgetExceeded(NumericalFailure):
    pass


class PartitionGap(NumericalFailure):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class AgreementViolation(NumericalFailure):
    pass


# riemannian
class OutOfDomain(ValidationError):
    pass


class DegenerateMetric(NumericalFailure):
    pass


class NonConvergent(NumericalFailure):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SeparationViolation(NumericalFailure):
    pass


class EmbeddingFailure(NumericalFailure):
    pass


# scenarios-cli
class ConfigError(ValidationError):
    pass
