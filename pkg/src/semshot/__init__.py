"""Few-shot classification lab on precomputed embedding caches.

Pipeline: evolve class names into rich descriptions through a language
model, train a small alignment network that maps (visual feature, semantic
embedding) pairs onto class centers, then score N-way K-shot episodes with
convex prototype fusion.
"""

from .errors import (
    ArgumentError,
    ClusterError,
    ConfigError,
    DataError,
    DimensionError,
    EmptyClassError,
    FormatError,
    LlmResponseError,
    LlmUnavailableError,
    MissingSemanticsError,
    NumericsError,
    SamplingError,
    SemshotError,
)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "ClusterError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "EmptyClassError",
    "FormatError",
    "LlmResponseError",
    "LlmUnavailableError",
    "MissingSemanticsError",
    "NumericsError",
    "SamplingError",
    "SemshotError",
    "__version__",
]
