"""Feature extraction scripts that feed the semshot evaluation pipeline."""

from .manifest import ExtractionManifest, ManifestError
from .text import MissingSourceError, extract_text
from .visual import extract_visual

__all__ = [
    "ExtractionManifest",
    "ManifestError",
    "MissingSourceError",
    "extract_text",
    "extract_visual",
]
