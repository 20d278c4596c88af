from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import semshot.semantic_evolution as semevo
from semshot.errors import (
    ArgumentError,
    ConfigError,
    DataError,
    DimensionError,
    LlmResponseError,
    LlmUnavailableError,
    MissingSemanticsError,
)
from semshot.feature_store import ClassEntry
from semshot.semantic_evolution import (
    CUB_NAME_TEMPLATE,
    ClassSemantics,
    LlmConfig,
    SemanticEmbeddingSet,
    SemanticSource,
    build_corpus,
    build_prompt,
    cache_key,
    load_semantic_embeddings,
    paraphrase_class,
    semantic_text,
    store_semantic_embeddings,
)


def llm_config(server, **overrides):
    kwargs = dict(
        endpoint_url=server.url,
        model_name="test-model",
        api_key_env_var="SEMSHOT_API_KEY",
        max_retries=3,
        timeout_seconds=5.0,
        temperature=0.0,
    )
    kwargs.update(overrides)
    return LlmConfig(**kwargs)


ZEBRA = ClassSemantics(class_id=0, class_name="zebra", definition="a horse with stripes")


# --- prompt construction --------------------------------------------------


def test_prompt_is_verbatim_template():
    assert build_prompt("zebra", "a horse with stripes") == (
        "a horse with stripes is the definition of the zebra. Please rewrite "
        "and expand this definition to make it more detailed and consistent "
        "with scientific fact. Briefness is required, using only one paragraph."
    )


def test_prompt_rejects_empty_inputs():
    with pytest.raises(ArgumentError):
        build_prompt("", "something")
    with pytest.raises(ArgumentError):
        build_prompt("zebra", "")


@settings(max_examples=50, deadline=None)
@given(
    st.text(min_size=1, max_size=40).filter(lambda s: "{" not in s and "}" not in s),
    st.text(min_size=1, max_size=40).filter(lambda s: "{" not in s and "}" not in s),
)
def test_prompt_always_ends_with_one_paragraph_clause(name, definition):
    out = build_prompt(name, definition)
    assert out.endswith("using only one paragraph.")
    assert out == build_prompt(name, definition)


# --- semantic text selection ----------------------------------------------


def test_name_template_substitution_cub_variant():
    entry = ClassSemantics(
        class_id=1, class_name="zebra", definition="d", name_template=CUB_NAME_TEMPLATE
    )
    assert semantic_text(entry, SemanticSource.NAME_TEMPLATE) == (
        "The Photo of a bird called zebra"
    )


def test_default_name_template():
    assert semantic_text(ZEBRA, SemanticSource.NAME_TEMPLATE) == "A photo of a zebra."


def test_paraphrase_passthrough():
    entry = ClassSemantics(class_id=0, class_name="x", definition="d", paraphrase="P")
    assert semantic_text(entry, SemanticSource.PARAPHRASE) == "P"
    assert semantic_text(entry, SemanticSource.DEFINITION) == "d"


def test_missing_paraphrase_raises():
    with pytest.raises(MissingSemanticsError):
        semantic_text(ZEBRA, SemanticSource.PARAPHRASE)


def test_multi_paragraph_paraphrase_rejected_on_entry():
    with pytest.raises(DataError):
        ClassSemantics(class_id=0, class_name="x", definition="d",
                       paraphrase="first paragraph.\n\nsecond paragraph.")
    with pytest.raises(DataError):
        ClassSemantics(class_id=0, class_name="x", definition="d", paraphrase="  ")


# --- paraphrase client: caching and retries --------------------------------


def test_cache_hit_performs_zero_requests(tmp_path, llm_server):
    llm = llm_config(llm_server)
    llm_server.set_script([(200, "a detailed zebra paragraph")])
    first = paraphrase_class(ZEBRA, llm, tmp_path)
    assert first.paraphrase == "a detailed zebra paragraph"
    assert llm_server.request_count == 1
    second = paraphrase_class(ZEBRA, llm, tmp_path)
    assert second.paraphrase == "a detailed zebra paragraph"
    assert llm_server.request_count == 1


def test_empty_response_raises(tmp_path, llm_server):
    llm_server.set_script([(200, "")])
    with pytest.raises(LlmResponseError):
        paraphrase_class(ZEBRA, llm_config(llm_server), tmp_path)


def test_multi_paragraph_response_raises(tmp_path, llm_server):
    llm_server.set_script([(200, "one paragraph.\n\nsecond paragraph.")])
    with pytest.raises(LlmResponseError):
        paraphrase_class(ZEBRA, llm_config(llm_server), tmp_path)
    assert not any(tmp_path.iterdir())  # bad responses are never cached


def test_two_failures_then_success_uses_three_requests(tmp_path, llm_server, monkeypatch):
    sleeps: list[float] = []
    monkeypatch.setattr(semevo.time, "sleep", sleeps.append)
    llm_server.set_script([(500, ""), (503, ""), (200, "third time lucky")])
    entry = paraphrase_class(ZEBRA, llm_config(llm_server), tmp_path)
    assert entry.paraphrase == "third time lucky"
    assert llm_server.request_count == 3
    assert sleeps == [1.0, 2.0]


def test_exhausted_retries_raise(tmp_path, llm_server, monkeypatch):
    monkeypatch.setattr(semevo.time, "sleep", lambda _: None)
    llm_server.set_script([(500, "")] * 3)
    with pytest.raises(LlmUnavailableError):
        paraphrase_class(ZEBRA, llm_config(llm_server, max_retries=2), tmp_path)
    assert llm_server.request_count == 3


def test_missing_api_key_raises(tmp_path, llm_server, monkeypatch):
    monkeypatch.delenv("SEMSHOT_API_KEY", raising=False)
    with pytest.raises(ConfigError):
        paraphrase_class(ZEBRA, llm_config(llm_server), tmp_path)
    assert llm_server.request_count == 0


def test_offline_cache_miss_raises(tmp_path, llm_server):
    with pytest.raises(LlmUnavailableError):
        paraphrase_class(ZEBRA, llm_config(llm_server), tmp_path, offline=True)
    assert llm_server.request_count == 0


def test_offline_with_warm_cache_succeeds(tmp_path, llm_server):
    llm = llm_config(llm_server)
    llm_server.set_script([(200, "warm")])
    paraphrase_class(ZEBRA, llm, tmp_path)
    assert llm_server.request_count == 1
    entry = paraphrase_class(ZEBRA, llm, tmp_path, offline=True)
    assert entry.paraphrase == "warm"
    assert llm_server.request_count == 1


def test_request_payload_shape(tmp_path, llm_server):
    llm = llm_config(llm_server, temperature=0.25)
    llm_server.set_script([(200, "ok")])
    paraphrase_class(ZEBRA, llm, tmp_path)
    payload = llm_server.requests[0]
    assert payload["model"] == "test-model"
    assert payload["temperature"] == 0.25
    assert payload["messages"] == [
        {"role": "user", "content": build_prompt("zebra", "a horse with stripes")}
    ]


# --- cache key contract -----------------------------------------------------


def test_cache_key_tracks_prompt_and_model_only():
    prompt = build_prompt("zebra", "a horse with stripes")
    base = cache_key(prompt, "model-a")
    assert cache_key(prompt, "model-b") != base
    other_prompt = build_prompt("zebra", "a striped equine")
    assert cache_key(other_prompt, "model-a") != base
    assert cache_key(prompt, "model-a") == base


def test_unrelated_config_fields_reuse_cache(tmp_path, llm_server):
    llm_server.set_script([(200, "cached once")])
    paraphrase_class(ZEBRA, llm_config(llm_server, timeout_seconds=5.0), tmp_path)
    assert llm_server.request_count == 1
    entry = paraphrase_class(
        ZEBRA, llm_config(llm_server, timeout_seconds=99.0, max_retries=0), tmp_path
    )
    assert entry.paraphrase == "cached once"
    assert llm_server.request_count == 1


# --- corpus builder ---------------------------------------------------------


class _RecordingDefinitions(dict):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.reads: list[int] = []

    def get(self, key, default=None):
        self.reads.append(key)
        return super().get(key, default)


def test_builder_reads_each_class_definition_independently(tmp_path, llm_server):
    table = {
        0: ClassEntry(0, "zebra"),
        1: ClassEntry(1, "ear"),
    }
    definitions = _RecordingDefinitions({0: "a horse with stripes", 1: "fruiting spike of corn"})
    llm_server.set_script([(200, "zebra paragraph"), (200, "corn paragraph")])
    entries = build_corpus(table, definitions, llm_config(llm_server), tmp_path)
    assert [e.class_id for e in entries] == [0, 1]
    assert definitions.reads == [0, 1]
    prompts = [req["messages"][0]["content"] for req in llm_server.requests]
    assert "a horse with stripes" in prompts[0] and "corn" not in prompts[0]
    assert "fruiting spike of corn" in prompts[1] and "stripes" not in prompts[1]


def test_builder_requires_definitions(tmp_path, llm_server):
    table = {0: ClassEntry(0, "zebra")}
    with pytest.raises(DataError):
        build_corpus(table, {}, llm_config(llm_server), tmp_path)


# --- embedding set I/O ------------------------------------------------------


def embedding_set(text_dim=2, entries=None):
    if entries is None:
        entries = {
            (0, SemanticSource.PARAPHRASE): np.arange(text_dim, dtype=np.float32),
            (1, SemanticSource.DEFINITION): -np.ones(text_dim, dtype=np.float32),
        }
    return SemanticEmbeddingSet(encoder_name="test-encoder", text_dim=text_dim,
                                _vectors=dict(entries))


def test_embeddings_round_trip(tmp_path):
    original = embedding_set()
    path = tmp_path / "emb.json"
    store_semantic_embeddings(original, path)
    loaded = load_semantic_embeddings(path)
    assert loaded.encoder_name == "test-encoder"
    assert loaded.text_dim == 2
    assert len(loaded) == 2
    for key, vec in original.items():
        assert np.array_equal(loaded.vector(key[0], key[1]), vec)


def test_embedding_wrong_length_raises():
    with pytest.raises(DimensionError):
        embedding_set(
            text_dim=2,
            entries={(0, SemanticSource.DEFINITION): np.ones(3, dtype=np.float32)},
        )


def test_embedding_non_finite_raises():
    with pytest.raises(DataError):
        embedding_set(
            text_dim=2,
            entries={(0, SemanticSource.DEFINITION): np.array([np.nan, 1.0])},
        )


def test_512_dim_contrastive_encoder_accepted():
    emb = SemanticEmbeddingSet(
        encoder_name="clip-vit-b16-text",
        text_dim=512,
        _vectors={(0, SemanticSource.NAME_TEMPLATE): np.zeros(512, dtype=np.float32)},
    )
    assert emb.text_dim == 512


def test_missing_embedding_raises():
    emb = embedding_set()
    with pytest.raises(MissingSemanticsError):
        emb.vector(99, SemanticSource.PARAPHRASE)
