"""N-way K-shot episode sampling, prototype fusion, and accuracy reporting.

Each task draws N classes and K+M records per class from a frozen cache;
queries are scored against class prototypes. A prototype is the support
mean, optionally blended with a network-reconstructed prototype through a
convex fusion factor k in [0, 1] (k=0 reproduces the plain support-mean
baseline bit for bit).

Task RNG streams derive from (seed, task_index), so any single task can be
resampled in isolation and tasks may run in any order or in parallel
without changing the report.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .alignment_net import AlignmentNetwork, AlignmentSource, forward
from .errors import (
    ArgumentError,
    DimensionError,
    MissingSemanticsError,
    NumericsError,
    SamplingError,
)
from .feature_store import FeatureCache
from .semantic_evolution import SemanticEmbeddingSet, SemanticSource

EpisodeSampler = Callable[["FeatureCache", "EpisodeSpec", int], "Episode"]


class ClassifierKind(enum.Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    LOGISTIC_REGRESSION = "lr"


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    m_query: int = 15
    task_count: int = 600
    split: str = "novel"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_way < 2:
            raise ArgumentError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1 or self.m_query < 1:
            raise ArgumentError("k_shot and m_query must be >= 1")
        if self.task_count < 1:
            raise ArgumentError("task_count must be >= 1")
        if self.seed < 0:
            raise ArgumentError("seed must be non-negative")


@dataclass(frozen=True)
class Episode:
    class_ids: tuple[int, ...]
    support_indices: np.ndarray  # (N, K) record rows
    query_indices: np.ndarray  # (N, M) record rows


def sample_episode(cache: FeatureCache, spec: EpisodeSpec, task_index: int) -> Episode:
    """Draw one task: N classes uniformly, then K+M distinct records per class.

    The first K drawn records form the support set. The RNG derives from
    (spec.seed, task_index).
    """
    if task_index < 0:
        raise ArgumentError("task_index must be non-negative")
    classes = cache.split_classes(spec.split)
    if len(classes) < spec.n_way:
        raise SamplingError(
            f"split {spec.split!r} offers {len(classes)} classes, "
            f"need {spec.n_way}"
        )
    need = spec.k_shot + spec.m_query
    for cid in classes:
        if cache.class_indices(cid).size < need:
            raise SamplingError(
                f"class {cid} has {cache.class_indices(cid).size} records, "
                f"need k_shot + m_query = {need}"
            )
    rng = np.random.default_rng([spec.seed, task_index])
    chosen = rng.choice(len(classes), size=spec.n_way, replace=False)
    class_ids = tuple(int(classes[i]) for i in chosen)
    support = np.empty((spec.n_way, spec.k_shot), dtype=np.intp)
    query = np.empty((spec.n_way, spec.m_query), dtype=np.intp)
    for row, cid in enumerate(class_ids):
        pool = cache.class_indices(cid)
        picks = rng.choice(pool.size, size=need, replace=False)
        support[row] = pool[picks[: spec.k_shot]]
        query[row] = pool[picks[spec.k_shot :]]
    support.flags.writeable = False
    query.flags.writeable = False
    return Episode(class_ids=class_ids, support_indices=support, query_indices=query)


def support_mean(episode: Episode, cache: FeatureCache) -> np.ndarray:
    """Mean support vector per episode class, shape (N, visual_dim)."""
    feats = cache.vectors[episode.support_indices].astype(np.float64)
    return feats.sum(axis=1) / feats.shape[1]


def reconstruct(
    net: AlignmentNetwork,
    episode: Episode,
    cache: FeatureCache,
    semantics: SemanticEmbeddingSet | None,
    source: SemanticSource | None,
) -> np.ndarray:
    """Network prototype per class: forward every support sample with its
    class-level semantic, then average the outputs (in that order)."""
    outputs = np.empty((len(episode.class_ids), net.visual_dim))
    for row, cid in enumerate(episode.class_ids):
        visual = cache.vectors[episode.support_indices[row]].astype(np.float64)
        if net.source is AlignmentSource.V:
            out = forward(net, visual=visual)
        else:
            if semantics is None or source is None:
                raise MissingSemanticsError(
                    "reconstruction with a semantic-fed network needs embeddings "
                    "and a source"
                )
            sem = semantics.vector(cid, source).astype(np.float64)
            sem_block = np.broadcast_to(sem, (visual.shape[0], sem.size))
            if net.source is AlignmentSource.S:
                out = forward(net, semantic=sem_block)
            else:
                out = forward(net, visual=visual, semantic=sem_block)
        outputs[row] = out.sum(axis=0) / out.shape[0]
    return outputs


def fuse(reconstructed: np.ndarray, support: np.ndarray, k: float) -> np.ndarray:
    """Convex blend k * reconstructed + (1 - k) * support, componentwise."""
    if not 0.0 <= k <= 1.0:
        raise ArgumentError(f"fusion factor must lie in [0, 1], got {k}")
    reconstructed = np.asarray(reconstructed, dtype=np.float64)
    support = np.asarray(support, dtype=np.float64)
    if reconstructed.shape != support.shape:
        raise DimensionError(
            f"prototype shapes differ: {reconstructed.shape} vs {support.shape}"
        )
    return k * reconstructed + (1.0 - k) * support


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _l2_normalize_rows(block: np.ndarray, what: str) -> np.ndarray:
    norms = np.sqrt((block * block).sum(axis=1, keepdims=True))
    if not np.isfinite(norms).all() or (norms == 0.0).any():
        raise NumericsError(f"{what} contains a zero-norm or non-finite vector")
    return block / norms


def _fit_logistic_regression(
    features: np.ndarray, labels: np.ndarray, n_classes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial logistic regression on L2-normalized support rows.

    Full-batch gradient descent, 100 iterations at learning rate 1.0; mean
    cross-entropy plus (lambda/2) * ||W||^2 with lambda = 1 / row count.
    Bias terms are unpenalized. Deterministic: weights start at zero.
    """
    n, dim = features.shape
    lam = 1.0 / n
    w = np.zeros((dim, n_classes))
    b = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    for _ in range(100):
        probs = _softmax_rows(features @ w + b)
        g = (probs - onehot) / n
        w -= 1.0 * (features.T @ g + lam * w)
        b -= 1.0 * g.sum(axis=0)
    return w, b


def classify_batch(
    queries: np.ndarray,
    prototypes: np.ndarray,
    kind: ClassifierKind,
    *,
    support_features: np.ndarray | None = None,
    support_labels: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities (Q, N) and argmax predictions (Q,) for a query block.

    Cosine / euclidean kinds softmax the similarity to each prototype
    (cosine similarity, or negative euclidean distance). The logistic
    kind ignores the prototypes and fits on the episode's support features.
    Argmax ties resolve to the lowest class index.
    """
    queries = np.asarray(queries, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if queries.ndim != 2 or prototypes.ndim != 2:
        raise DimensionError("queries and prototypes must be 2-D")
    if queries.shape[1] != prototypes.shape[1]:
        raise DimensionError(
            f"query dim {queries.shape[1]} != prototype dim {prototypes.shape[1]}"
        )
    if kind is ClassifierKind.COSINE:
        q = _l2_normalize_rows(queries, "query set")
        p = _l2_normalize_rows(prototypes, "prototype set")
        scores = q @ p.T
    elif kind is ClassifierKind.EUCLIDEAN:
        diff = queries[:, None, :] - prototypes[None, :, :]
        scores = -np.sqrt((diff * diff).sum(axis=2))
    else:
        if support_features is None or support_labels is None:
            raise ArgumentError(
                "logistic-regression classification needs support features and labels"
            )
        feats = _l2_normalize_rows(
            np.asarray(support_features, dtype=np.float64), "support set"
        )
        w, b = _fit_logistic_regression(
            feats, np.asarray(support_labels), prototypes.shape[0]
        )
        scores = _l2_normalize_rows(queries, "query set") @ w + b
    probs = _softmax_rows(scores)
    preds = np.argmax(probs, axis=1)
    return probs, preds


def classify(
    query: np.ndarray,
    prototypes: np.ndarray,
    kind: ClassifierKind,
    *,
    support_features: np.ndarray | None = None,
    support_labels: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Single-query convenience wrapper around :func:`classify_batch`."""
    probs, preds = classify_batch(
        np.asarray(query, dtype=np.float64)[None, :],
        prototypes,
        kind,
        support_features=support_features,
        support_labels=support_labels,
    )
    return probs[0], int(preds[0])


def ci95(per_task_accuracy: np.ndarray | list[float]) -> float:
    """1.96 * population standard deviation / sqrt(task count)."""
    accs = np.asarray(per_task_accuracy, dtype=np.float64)
    return float(1.96 * accs.std(ddof=0) / np.sqrt(accs.size))


@dataclass
class EvalReport:
    mean_accuracy: float
    ci95: float
    per_task_accuracy: list[float]
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
            "per_task_accuracy": self.per_task_accuracy,
            "config": self.config,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            mean_accuracy=payload["mean_accuracy"],
            ci95=payload["ci95"],
            per_task_accuracy=list(payload["per_task_accuracy"]),
            config=payload.get("config", {}),
        )


def _report_config(
    spec: EpisodeSpec,
    k: float,
    kind: ClassifierKind,
    source: SemanticSource | None,
    encoder: str | None,
) -> dict:
    return {
        "n_way": spec.n_way,
        "k_shot": spec.k_shot,
        "m_query": spec.m_query,
        "task_count": spec.task_count,
        "split": spec.split,
        "seed": spec.seed,
        "k": k,
        "classifier": kind.value,
        "source": source.value if source else None,
        "encoder": encoder,
    }


def _task_accuracy(
    cache: FeatureCache,
    episode: Episode,
    prototypes: np.ndarray,
    kind: ClassifierKind,
) -> float:
    n, m = episode.query_indices.shape
    queries = cache.vectors[episode.query_indices].astype(np.float64).reshape(n * m, -1)
    labels = np.repeat(np.arange(n), m)
    kwargs = {}
    if kind is ClassifierKind.LOGISTIC_REGRESSION:
        k_shot = episode.support_indices.shape[1]
        kwargs["support_features"] = (
            cache.vectors[episode.support_indices]
            .astype(np.float64)
            .reshape(n * k_shot, -1)
        )
        kwargs["support_labels"] = np.repeat(np.arange(n), k_shot)
    _, preds = classify_batch(queries, prototypes, kind, **kwargs)
    return float(np.mean(preds == labels))


def evaluate(
    net: AlignmentNetwork | None,
    cache: FeatureCache,
    semantics: SemanticEmbeddingSet | None,
    spec: EpisodeSpec,
    k: float,
    kind: ClassifierKind = ClassifierKind.COSINE,
    *,
    source: SemanticSource | None = None,
    episode_fn: EpisodeSampler | None = None,
) -> EvalReport:
    """Run ``spec.task_count`` tasks and report mean accuracy with a 95% CI.

    With ``net=None`` the evaluator is the plain support-mean baseline and
    ``k`` must be 0. ``episode_fn`` swaps in an alternative episode sampler
    (same signature as :func:`sample_episode`); the default is uniform.
    """
    if net is None and k != 0.0:
        raise ArgumentError("without a network the fusion factor must be 0")
    if not 0.0 <= k <= 1.0:
        raise ArgumentError(f"fusion factor must lie in [0, 1], got {k}")
    sampler = episode_fn or sample_episode
    accs = np.empty(spec.task_count)
    for task_index in range(spec.task_count):
        episode = sampler(cache, spec, task_index)
        prototypes = support_mean(episode, cache)
        if net is not None:
            rec = reconstruct(net, episode, cache, semantics, source)
            prototypes = fuse(rec, prototypes, k)
        accs[task_index] = _task_accuracy(cache, episode, prototypes, kind)
    return EvalReport(
        mean_accuracy=float(accs.mean()),
        ci95=ci95(accs),
        per_task_accuracy=[float(a) for a in accs],
        config=_report_config(
            spec, k, kind, source, semantics.encoder_name if semantics else None
        ),
    )


def sweep_k(
    net: AlignmentNetwork,
    cache: FeatureCache,
    semantics: SemanticEmbeddingSet | None,
    spec: EpisodeSpec,
    kind: ClassifierKind = ClassifierKind.COSINE,
    step: float = 0.01,
    *,
    source: SemanticSource | None = None,
    episode_fn: EpisodeSampler | None = None,
) -> list[tuple[float, float]]:
    """Mean accuracy over the fusion grid {0, step, ..., 1}.

    Every grid point reuses the exact same episodes (same task RNG streams),
    so the curve isolates the fusion factor. Grid points are i / round(1/step)
    so the endpoint lands exactly on 1.0.
    """
    if step <= 0:
        raise ArgumentError("step must be positive")
    steps = round(1.0 / step)
    if steps < 1 or abs(steps * step - 1.0) > 1e-9:
        raise ArgumentError(f"step {step} does not divide 1")
    ks = [i / steps for i in range(steps + 1)]
    sampler = episode_fn or sample_episode
    # Aggregated exactly like evaluate() (same reduction over the same
    # per-task values), so the k=0 point reproduces the baseline bit for bit.
    accs = np.empty((len(ks), spec.task_count))
    for task_index in range(spec.task_count):
        episode = sampler(cache, spec, task_index)
        u = support_mean(episode, cache)
        rec = reconstruct(net, episode, cache, semantics, source)
        if kind is ClassifierKind.LOGISTIC_REGRESSION:
            # The logistic head ignores prototypes; one fit covers all k.
            accs[:, task_index] = _task_accuracy(cache, episode, u, kind)
            continue
        for i, k in enumerate(ks):
            prototypes = fuse(rec, u, k)
            accs[i, task_index] = _task_accuracy(cache, episode, prototypes, kind)
    return [(k, float(np.ascontiguousarray(accs[i]).mean())) for i, k in enumerate(ks)]
