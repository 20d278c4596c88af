"""Class-name semantics: curated definitions, LLM paraphrases, text embeddings.

The pipeline upgrades each class name in two steps: a curated one-line
definition replaces the bare (often ambiguous) name, and a language model
rewrites that definition into a richer single-paragraph description. Each
class is processed independently, so no description can carry information
about another class.

Paraphrases are cached on disk, keyed by SHA-256 of (prompt || model name),
one UTF-8 text file per key. Cache writes go through a temp file and an
atomic rename, so concurrent builders never corrupt entries.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import requests

from .errors import (
    ArgumentError,
    ConfigError,
    DataError,
    DimensionError,
    LlmResponseError,
    LlmUnavailableError,
    MissingSemanticsError,
)
from .feature_store import ClassEntry

PROMPT_TEMPLATE = (
    "{definition} is the definition of the {class_name}. Please rewrite and "
    "expand this definition to make it more detailed and consistent with "
    "scientific fact. Briefness is required, using only one paragraph."
)

DEFAULT_NAME_TEMPLATE = "A photo of a {class_name}."
# Bird-dataset cross-domain runs use this wording instead of the default.
CUB_NAME_TEMPLATE = "The Photo of a bird called {class_name}"

_BACKOFF_BASE_SECONDS = 1.0
_BACKOFF_FACTOR = 2.0


class SemanticSource(enum.Enum):
    """Which text stands in for a class."""

    NAME_TEMPLATE = "name"
    DEFINITION = "definition"
    PARAPHRASE = "paraphrase"


@dataclass(frozen=True)
class ClassSemantics:
    class_id: int
    class_name: str
    definition: str
    paraphrase: str | None = None
    name_template: str = DEFAULT_NAME_TEMPLATE

    def __post_init__(self) -> None:
        if self.paraphrase is not None:
            if not self.paraphrase.strip():
                raise DataError(f"class {self.class_id}: empty paraphrase")
            if "\n\n" in self.paraphrase:
                raise DataError(
                    f"class {self.class_id}: paraphrase must be a single "
                    "paragraph (no blank-line separators)"
                )


@dataclass(frozen=True)
class LlmConfig:
    endpoint_url: str
    model_name: str = "gpt-3.5-turbo"
    api_key_env_var: str = "SEMSHOT_API_KEY"
    max_retries: int = 3
    timeout_seconds: float = 30.0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ArgumentError("max_retries must be >= 0")
        if self.timeout_seconds <= 0:
            raise ArgumentError("timeout_seconds must be positive")


def build_prompt(class_name: str, definition: str) -> str:
    """Render the paraphrase request for one class. Pure and byte-stable."""
    if not class_name or not definition:
        raise ArgumentError("class_name and definition must be non-empty")
    return PROMPT_TEMPLATE.format(definition=definition, class_name=class_name)


def cache_key(prompt: str, model_name: str) -> str:
    return hashlib.sha256((prompt + model_name).encode("utf-8")).hexdigest()


def _cache_path(cache_dir: str | Path, key: str) -> Path:
    return Path(cache_dir) / f"{key}.txt"


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".txt")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _call_llm(prompt: str, llm: LlmConfig) -> str:
    api_key = os.environ.get(llm.api_key_env_var)
    if not api_key:
        raise ConfigError(
            f"environment variable {llm.api_key_env_var!r} is unset; it must "
            "hold the API key for the language-model endpoint"
        )
    payload = {
        "model": llm.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": llm.temperature,
    }
    headers = {"Authorization": f"Bearer {api_key}"}
    last_exc: Exception | None = None
    for attempt in range(llm.max_retries + 1):
        if attempt > 0:
            time.sleep(_BACKOFF_BASE_SECONDS * _BACKOFF_FACTOR ** (attempt - 1))
        try:
            resp = requests.post(
                llm.endpoint_url,
                json=payload,
                headers=headers,
                timeout=llm.timeout_seconds,
            )
            resp.raise_for_status()
        except requests.RequestException as exc:
            last_exc = exc
            continue
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmResponseError(
                f"endpoint reply does not carry choices[0].message.content: {exc}"
            ) from exc
        if not isinstance(content, str) or not content.strip():
            raise LlmResponseError("endpoint returned an empty paraphrase")
        content = content.strip()
        if "\n\n" in content:
            raise LlmResponseError(
                "endpoint returned a multi-paragraph description; the prompt "
                "requires a single paragraph"
            )
        return content
    raise LlmUnavailableError(
        f"giving up on {llm.endpoint_url} after {llm.max_retries + 1} attempts"
    ) from last_exc


def paraphrase_class(
    entry: ClassSemantics,
    llm: LlmConfig,
    cache_dir: str | Path,
    *,
    offline: bool = False,
) -> ClassSemantics:
    """Fill in ``entry.paraphrase``, via the disk cache when possible.

    A cache hit performs no network access. With ``offline=True`` a miss
    raises LlmUnavailableError instead of calling out.
    """
    if not entry.definition:
        raise DataError(f"class {entry.class_id} ({entry.class_name!r}) has no definition")
    prompt = build_prompt(entry.class_name, entry.definition)
    path = _cache_path(cache_dir, cache_key(prompt, llm.model_name))
    if path.exists():
        return replace(entry, paraphrase=path.read_text(encoding="utf-8"))
    if offline:
        raise LlmUnavailableError(
            f"offline mode: no cached paraphrase for class {entry.class_id} "
            f"({entry.class_name!r})"
        )
    text = _call_llm(prompt, llm)
    _write_atomic(path, text)
    return replace(entry, paraphrase=text)


def semantic_text(entry: ClassSemantics, source: SemanticSource) -> str:
    """The text representing ``entry`` under the chosen source."""
    if source is SemanticSource.NAME_TEMPLATE:
        return entry.name_template.format(class_name=entry.class_name)
    if source is SemanticSource.DEFINITION:
        return entry.definition
    if entry.paraphrase is None:
        raise MissingSemanticsError(
            f"class {entry.class_id} ({entry.class_name!r}) has no paraphrase"
        )
    return entry.paraphrase


def build_corpus(
    class_table: Mapping[int, ClassEntry],
    definitions: Mapping[int, str],
    llm: LlmConfig | None = None,
    cache_dir: str | Path | None = None,
    *,
    offline: bool = False,
    name_template: str = DEFAULT_NAME_TEMPLATE,
    paraphrase: bool = True,
) -> list[ClassSemantics]:
    """Assemble per-class semantics, one class at a time.

    Each class reads only its own definition entry; the loop never consults
    another class's data, so descriptions cannot leak across classes.
    """
    entries: list[ClassSemantics] = []
    for cid in sorted(class_table):
        info = class_table[cid]
        definition = definitions.get(cid)
        if not definition:
            raise DataError(f"no definition for class {cid} ({info.class_name!r})")
        entry = ClassSemantics(
            class_id=cid,
            class_name=info.class_name,
            definition=definition,
            name_template=name_template,
        )
        if paraphrase:
            if llm is None or cache_dir is None:
                raise ConfigError("paraphrasing requires an LlmConfig and a cache_dir")
            entry = paraphrase_class(entry, llm, cache_dir, offline=offline)
        entries.append(entry)
    return entries


def save_corpus(entries: list[ClassSemantics], path: str | Path) -> None:
    payload = [
        {
            "class_id": e.class_id,
            "class_name": e.class_name,
            "definition": e.definition,
            "paraphrase": e.paraphrase,
            "name_template": e.name_template,
        }
        for e in sorted(entries, key=lambda e: e.class_id)
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(path: str | Path) -> list[ClassSemantics]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return [
        ClassSemantics(
            class_id=int(item["class_id"]),
            class_name=item["class_name"],
            definition=item["definition"],
            paraphrase=item.get("paraphrase"),
            name_template=item.get("name_template", DEFAULT_NAME_TEMPLATE),
        )
        for item in payload
    ]


def load_definitions(path: str | Path) -> dict[int, str]:
    """Read the curated ``{class_id: definition}`` JSON store."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return {int(k): str(v) for k, v in payload.items()}


@dataclass
class SemanticEmbeddingSet:
    """Per-(class, source) text embeddings from one encoder."""

    encoder_name: str
    text_dim: int
    _vectors: dict[tuple[int, SemanticSource], np.ndarray]

    def __post_init__(self) -> None:
        if self.text_dim <= 0:
            raise DimensionError(f"text_dim must be positive, got {self.text_dim}")
        for (cid, source), vec in self._vectors.items():
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (self.text_dim,):
                raise DimensionError(
                    f"embedding for class {cid} / {source.value} has shape "
                    f"{vec.shape}, expected ({self.text_dim},)"
                )
            if not np.isfinite(vec).all():
                raise DataError(
                    f"embedding for class {cid} / {source.value} has non-finite entries"
                )
            vec.flags.writeable = False
            self._vectors[(cid, source)] = vec

    def vector(self, class_id: int, source: SemanticSource) -> np.ndarray:
        try:
            return self._vectors[(int(class_id), source)]
        except KeyError:
            raise MissingSemanticsError(
                f"no {source.value!r} embedding for class {class_id} "
                f"(encoder {self.encoder_name!r})"
            ) from None

    def has(self, class_id: int, source: SemanticSource) -> bool:
        return (int(class_id), source) in self._vectors

    def sources(self) -> tuple[SemanticSource, ...]:
        present = {source for _, source in self._vectors}
        return tuple(s for s in SemanticSource if s in present)

    def items(self):
        return self._vectors.items()

    def __len__(self) -> int:
        return len(self._vectors)


def store_semantic_embeddings(embeddings: SemanticEmbeddingSet, path: str | Path) -> None:
    entries = [
        {
            "class_id": cid,
            "source": source.value,
            "vector": [float(x) for x in vec],
        }
        for (cid, source), vec in sorted(
            embeddings.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
        )
    ]
    payload = {
        "encoder_name": embeddings.encoder_name,
        "text_dim": embeddings.text_dim,
        "entries": entries,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_semantic_embeddings(path: str | Path) -> SemanticEmbeddingSet:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    vectors: dict[tuple[int, SemanticSource], np.ndarray] = {}
    for item in payload["entries"]:
        key = (int(item["class_id"]), SemanticSource(item["source"]))
        vectors[key] = np.asarray(item["vector"], dtype=np.float32)
    return SemanticEmbeddingSet(
        encoder_name=payload["encoder_name"],
        text_dim=int(payload["text_dim"]),
        _vectors=vectors,
    )
