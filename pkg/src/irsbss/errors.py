"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent or out-of-range scenario / solver parameters."""


class DegenerateInputError(ValueError):
    """Input carries no usable signal (e.g. an all-zero sequence)."""


class EmptyAlphabetError(RuntimeError):
    """Alphabet extraction found no peak above the retention threshold."""


class ExtractionFailure(RuntimeError):
    """Signal extraction collapsed and could not be recovered by restarts."""
