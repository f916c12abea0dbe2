"""Exception types shared across the pipeline stages."""


class WebshockError(Exception):
    """Base class for all pipeline errors."""


class RegistryError(WebshockError):
    """Bad or missing crawl snapshot registry."""


class FetchError(WebshockError):
    """Network or archive read failure after retries were exhausted."""


class RecordParseError(WebshockError):
    """An archive record could not be parsed."""


class DigestMismatchError(WebshockError):
    """Fetched payload does not hash to the index entry's digest."""


class KeywordTableError(WebshockError):
    """Bad or missing keyword table."""


class ModelOutputError(WebshockError):
    """Model output could not be parsed into a classification."""


class SpecificationError(WebshockError):
    """Invalid or internally inconsistent regression specification."""


class EstimationError(WebshockError):
    """Estimation failed (degenerate sample, collinearity, etc.)."""


class ConfigError(WebshockError):
    """Invalid pipeline configuration."""
