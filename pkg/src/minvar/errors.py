"""Exception types shared across the library.

Every failure surfaced to callers derives from :class:`MinvarError` so the
command-line layer can map any library failure to a structured message and
a stable exit code.
"""


class MinvarError(Exception):
    """Base class for all library errors."""


class IngestionError(MinvarError):
    """A CSV row or cell could not be parsed; message carries row/column."""


class UniverseTooSmallError(MinvarError):
    """Fewer than two assets survived ingestion or filtering."""


class InsufficientHistoryError(MinvarError):
    """A panel or split is too short for the requested windows."""


class InvalidConfigError(MinvarError):
    """A configuration value violates its declared invariant."""


class InsufficientObservationsError(MinvarError):
    """An estimator needs more rows than the input provides."""


class DegenerateCovarianceError(MinvarError):
    """No eigenvalue survives truncation (non-positive spectrum)."""


class SingularMatrixError(MinvarError):
    """Matrix not invertible even after the ridge was applied."""


class DegenerateBudgetError(MinvarError):
    """1'P1 vanished, so portfolio weights cannot be normalized."""


class CheckpointError(MinvarError):
    """A parameter checkpoint is missing, corrupt, or mismatched."""


class RebalanceError(MinvarError):
    """A strategy failed to produce weights at a rebalance date."""


class TrainingAbortError(MinvarError):
    """Training hit a non-finite loss or a systematic solve failure."""
