"""Exception taxonomy shared across the package.

CLI exit-code mapping: UsageError/ConfigurationError/IngestionError -> 2,
everything else raised at runtime -> 1.
"""


class SurvmoeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SurvmoeError):
    """Invalid configuration value or inconsistent shapes/dimensions."""


class IngestionError(SurvmoeError):
    """Malformed input data (CSV/schema), with row/column context where known."""


class NumericDomainError(SurvmoeError):
    """Operation applied outside its numeric domain (log of non-positive, non-finite logits)."""


class UsageError(SurvmoeError):
    """API misuse: wrong argument kinds, empty batches, non-scalar backward roots."""


class MetricUndefinedError(SurvmoeError):
    """Metric has no comparable pairs (or no events) on the given data."""


class TrainingAbortedError(SurvmoeError):
    """Training run aborted on a non-finite loss."""

    def __init__(self, message, last_finite_loss=None, batch_index=None, epoch=None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss
        self.batch_index = batch_index
        self.epoch = epoch
