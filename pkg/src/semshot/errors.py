"""Exception hierarchy shared across the package."""


class SemshotError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(SemshotError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(SemshotError):
    """A vector or matrix does not have the declared dimensionality."""


class FormatError(SemshotError):
    """A file does not conform to its on-disk schema."""


class DataError(SemshotError):
    """Payload values are invalid (non-finite entries, empty fields, ...)."""


class EmptyClassError(SemshotError):
    """A split lists a class with no records behind it."""


class ClusterError(SemshotError):
    """Clustering is impossible with the requested cluster count."""


class ConfigError(SemshotError):
    """Runtime configuration is missing or inconsistent (e.g. no API key)."""


class LlmUnavailableError(SemshotError):
    """The language-model endpoint could not be reached within the retry budget."""


class LlmResponseError(SemshotError):
    """The language-model endpoint answered with an unusable payload."""


class MissingSemanticsError(SemshotError):
    """A required semantic text or embedding is absent for a class."""


class NumericsError(SemshotError):
    """A numeric computation left the domain it is defined on."""


class SamplingError(SemshotError):
    """An episode cannot be sampled under the requested sizes."""
