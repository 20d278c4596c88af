"""Synthetic gaussian-cluster datasets for desk-scale verification runs.

Class centers are drawn once, samples scatter around them, and each class's
semantic embedding is a fixed random linear map of its center plus small
noise. Semantics therefore predict centers by construction, which makes the
semantic-to-center alignment mechanism testable without real datasets or
encoders.

The periphery sampler biases episode support sets toward each class's
farthest-from-center quartile, recreating the situation where a support
sample is a poor stand-in for its class.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .episodic_protocol import Episode, EpisodeSampler, EpisodeSpec, sample_episode
from .errors import ArgumentError, SamplingError
from .feature_store import FeatureCache, FeatureCacheHeader
from .semantic_evolution import SemanticEmbeddingSet, SemanticSource

SYNTHETIC_ENCODER_NAME = "synthetic-linear-map"

# Salt appended to (seed, task_index) so periphery redraws never reuse the
# base sampler's stream.
_PERIPHERY_STREAM = 0x5EED


@dataclass(frozen=True)
class SyntheticSpec:
    base_classes: int
    novel_classes: int
    samples_per_class: int
    visual_dim: int
    text_dim: int
    center_scale: float = 1.0
    noise_sigma: float = 0.5
    seed: int = 0
    semantic_map_seed: int = 7
    center_rank: int | None = None
    center_tail: float = 0.1
    periphery_bias: float = 0.0
    dataset_name: str = "synthetic"

    def __post_init__(self) -> None:
        if min(self.base_classes, self.novel_classes, self.samples_per_class) < 1:
            raise ArgumentError("class and sample counts must be >= 1")
        if self.visual_dim < 1 or self.text_dim < 1:
            raise ArgumentError("dims must be positive")
        if self.noise_sigma < 0:
            raise ArgumentError("noise_sigma must be non-negative")
        if self.center_scale <= 0:
            raise ArgumentError("center_scale must be positive")
        if not 0.0 <= self.periphery_bias <= 1.0:
            raise ArgumentError("periphery_bias must lie in [0, 1]")
        if self.center_rank is not None and not (
            1 <= self.center_rank <= min(self.visual_dim, self.text_dim)
        ):
            raise ArgumentError(
                "center_rank must lie in [1, min(visual_dim, text_dim)]"
            )
        if self.center_tail < 0:
            raise ArgumentError("center_tail must be non-negative")

    @property
    def resolved_center_rank(self) -> int:
        if self.center_rank is not None:
            return self.center_rank
        return min(8, max(1, min(self.visual_dim, self.text_dim) // 2))


def gen_synthetic(
    spec: SyntheticSpec,
) -> tuple[FeatureCache, SemanticEmbeddingSet, dict[int, np.ndarray]]:
    """Build (cache, semantic embeddings, ground-truth centers).

    Base classes get ids 0..base-1, novel classes follow. All three semantic
    sources are emitted per class: the same mapped-center signal with
    independent noise draws, so source ablations run on synthetic data.
    """
    rng = np.random.default_rng(spec.seed)
    n_classes = spec.base_classes + spec.novel_classes
    # Centers are i.i.d. gaussian with most of their energy inside a shared
    # center_rank-dimensional subspace (plus a small isotropic tail). The
    # subspace fits through the text_dim bottleneck, which is what makes the
    # center direction recoverable from semantics; fully isotropic centers
    # in visual_dim dimensions would leave most of it unrecoverable.
    rank = spec.resolved_center_rank
    basis, _ = np.linalg.qr(rng.normal(size=(spec.visual_dim, rank)))
    coords = rng.normal(size=(n_classes, rank))
    tail = rng.normal(size=(n_classes, spec.visual_dim))
    centers = spec.center_scale * (coords @ basis.T + spec.center_tail * tail)

    vectors = np.empty(
        (n_classes * spec.samples_per_class, spec.visual_dim), dtype=np.float32
    )
    class_ids = np.empty(n_classes * spec.samples_per_class, dtype=np.int64)
    for cid in range(n_classes):
        start = cid * spec.samples_per_class
        noise = rng.normal(0.0, 1.0, size=(spec.samples_per_class, spec.visual_dim))
        vectors[start : start + spec.samples_per_class] = (
            centers[cid] + spec.noise_sigma * noise
        ).astype(np.float32)
        class_ids[start : start + spec.samples_per_class] = cid

    map_rng = np.random.default_rng(spec.semantic_map_seed)
    linear_map = map_rng.normal(
        0.0, 1.0 / np.sqrt(spec.visual_dim), size=(spec.text_dim, spec.visual_dim)
    )
    sem_sigma = 0.1 * spec.noise_sigma
    sem_vectors: dict[tuple[int, SemanticSource], np.ndarray] = {}
    for cid in range(n_classes):
        mapped = linear_map @ centers[cid]
        for source in SemanticSource:
            noise = rng.normal(0.0, 1.0, size=spec.text_dim)
            sem_vectors[(cid, source)] = (mapped + sem_sigma * noise).astype(np.float32)

    header = FeatureCacheHeader(
        visual_dim=spec.visual_dim,
        record_count=n_classes * spec.samples_per_class,
        dataset_name=spec.dataset_name,
        split_table={
            "base": tuple(range(spec.base_classes)),
            "novel": tuple(range(spec.base_classes, n_classes)),
        },
    )
    cache = FeatureCache(header=header, class_ids=class_ids, vectors=vectors)
    embeddings = SemanticEmbeddingSet(
        encoder_name=SYNTHETIC_ENCODER_NAME,
        text_dim=spec.text_dim,
        _vectors=sem_vectors,
    )
    truth = {cid: centers[cid].copy() for cid in range(n_classes)}
    return cache, embeddings, truth


def periphery_pools(
    cache: FeatureCache, centers: dict[int, np.ndarray]
) -> dict[int, np.ndarray]:
    """Record rows of each class's top-quartile distance-to-center samples."""
    pools: dict[int, np.ndarray] = {}
    for cid, center in centers.items():
        rows = cache.class_indices(cid)
        if rows.size == 0:
            continue
        dist = np.linalg.norm(
            cache.vectors[rows].astype(np.float64) - np.asarray(center), axis=1
        )
        take = max(1, rows.size // 4)
        # Farthest records first; argsort is stable so ties resolve by row order.
        order = np.argsort(-dist, kind="stable")[:take]
        pools[cid] = rows[np.sort(order)]
    return pools


def periphery_sampler(
    centers: dict[int, np.ndarray], bias: float
) -> EpisodeSampler:
    """Episode sampler whose support slots redraw from the periphery pool.

    Each support slot independently comes from the class's top-quartile
    distance-to-center pool with probability ``bias`` (from the untouched
    uniform draw otherwise). Query sets are left exactly as the base sampler
    produced them, and support/query disjointness is preserved.
    """
    if not 0.0 <= bias <= 1.0:
        raise ArgumentError("bias must lie in [0, 1]")
    # Keyed by id() with a strong reference to the cache, so a recycled
    # address can never alias a stale pool table.
    pools_cache: dict[int, tuple[FeatureCache, dict[int, np.ndarray]]] = {}

    def sampler(cache: FeatureCache, spec: EpisodeSpec, task_index: int) -> Episode:
        episode = sample_episode(cache, spec, task_index)
        if bias == 0.0:
            return episode
        if id(cache) not in pools_cache:
            pools_cache[id(cache)] = (cache, periphery_pools(cache, centers))
        pools = pools_cache[id(cache)][1]
        rng = np.random.default_rng([spec.seed, task_index, _PERIPHERY_STREAM])
        support = episode.support_indices.copy()
        for row, cid in enumerate(episode.class_ids):
            taken = set(episode.query_indices[row].tolist())
            for slot in range(spec.k_shot):
                if rng.random() >= bias:
                    taken.add(int(support[row, slot]))
                    continue
                candidates = [
                    int(r) for r in pools[cid] if int(r) not in taken
                ]
                if not candidates:
                    raise SamplingError(
                        f"class {cid} has no periphery records left for support"
                    )
                pick = candidates[int(rng.integers(len(candidates)))]
                support[row, slot] = pick
                taken.add(pick)
        support.flags.writeable = False
        return replace(episode, support_indices=support)

    return sampler
