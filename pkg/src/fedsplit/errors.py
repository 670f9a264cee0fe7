"""Exception hierarchy shared across the package."""


class FedsplitError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FedsplitError):
    """Array shapes inconsistent with the declared contract."""


class ValidationError(FedsplitError):
    """A value violates its documented domain."""


class SchemaError(ValidationError):
    """A required column or key is missing or mistyped."""


class ParseError(ValidationError):
    """A cell could not be parsed; carries the offending row index."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class ConfigError(FedsplitError):
    """Experiment configuration invalid; message names the offending key."""


class StratificationError(FedsplitError):
    """A class is too small to honor the requested stratified split."""


class DegenerateLabelsError(FedsplitError):
    """A binary fit was requested on single-class labels."""


class ContractViolationError(FedsplitError):
    """An internal precondition was broken (e.g. stale backprop cache)."""


class UndefinedMetricError(FedsplitError):
    """Metric undefined for the given inputs (e.g. single-class AUROC)."""


class EvaluationInfeasibleError(FedsplitError):
    """Evaluation cannot proceed (e.g. trimming removed an entire arm)."""


class AuditInfeasibleError(FedsplitError):
    """Membership audit pools too small for the configured sample size."""
