"""Exception types shared across the package."""


class ExpdesignError(Exception):
    """Base class for all package-specific errors."""


class DatasetError(ExpdesignError):
    """Measurement/embedding ingestion or candidate lookup failure."""


class ConfigError(ExpdesignError):
    """Invalid experiment configuration."""


class PromptError(ExpdesignError):
    """Prompt spec cannot be rendered."""


class ParseError(ExpdesignError):
    """LLM response does not contain a usable solution."""


class BackendError(ExpdesignError):
    """LLM backend failed permanently."""


class TransientBackendError(BackendError):
    """LLM backend failed in a way that is worth retrying."""


class NumericalError(ExpdesignError):
    """A linear-algebra routine could not produce a usable factorization."""
