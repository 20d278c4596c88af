"""Encode per-class semantic texts into an embedding-set file."""

from __future__ import annotations

import logging

import numpy as np

from semshot.semantic_evolution import (
    ClassSemantics,
    SemanticEmbeddingSet,
    SemanticSource,
    semantic_text,
    store_semantic_embeddings,
)

from .encoders import make_text_encoder
from .manifest import ExtractionManifest, ManifestError

log = logging.getLogger(__name__)


class MissingSourceError(ValueError):
    """Raised when requested semantic texts are absent; lists the class ids."""

    def __init__(self, source: str, class_ids: list[int]):
        self.source = source
        self.class_ids = class_ids
        super().__init__(
            f"source {source!r} missing for classes: "
            + ", ".join(str(c) for c in class_ids)
        )


def extract_text(
    manifest: ExtractionManifest, corpus: list[ClassSemantics]
) -> SemanticEmbeddingSet:
    """One embedding per (class, source); writes and returns the set."""
    encoder = make_text_encoder(manifest.text)
    vectors: dict[tuple[int, SemanticSource], np.ndarray] = {}
    for source_value in manifest.text.sources:
        source = SemanticSource(source_value)
        missing = [
            e.class_id
            for e in corpus
            if source is SemanticSource.PARAPHRASE and e.paraphrase is None
        ]
        if missing:
            raise MissingSourceError(source.value, sorted(missing))
        for entry in corpus:
            vec = encoder.encode(semantic_text(entry, source))
            if vec.shape != (manifest.text.dim,):
                raise ManifestError(
                    f"text encoder emits {vec.shape}-shaped vectors, "
                    f"manifest declares ({manifest.text.dim},)"
                )
            vectors[(entry.class_id, source)] = vec
    embeddings = SemanticEmbeddingSet(
        encoder_name=manifest.text.name,
        text_dim=manifest.text.dim,
        _vectors=vectors,
    )
    manifest.embeddings_out.parent.mkdir(parents=True, exist_ok=True)
    store_semantic_embeddings(embeddings, manifest.embeddings_out)
    log.info("wrote %d embeddings to %s", len(embeddings), manifest.embeddings_out)
    return embeddings
