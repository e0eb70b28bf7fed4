"""Exception types shared across the toolkit."""


class GmmdError(Exception):
    """Base class for all toolkit errors."""


class InputError(GmmdError):
    """Caller-supplied data is invalid (shapes, ranges, file schemas)."""


class FitError(GmmdError):
    """Standardizer fitting failed (too few anchor vectors)."""


class DegenerateBandwidthError(GmmdError):
    """Median pairwise distance is zero; no usable RBF bandwidth exists."""


class SampleSizeError(GmmdError):
    """Too few samples for the unbiased MMD estimator."""


class UndefinedCorrelationError(GmmdError):
    """Rank correlation is undefined (a constant input series)."""


class CacheCorruptionError(GmmdError):
    """Stored vector bytes do not match their recorded hash."""


class InferenceError(GmmdError):
    """Backbone model loading or execution failed."""
