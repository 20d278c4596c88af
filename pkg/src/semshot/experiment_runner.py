"""Ablation drivers and report emission on top of the episodic evaluator.

Every driver evaluates all of its arms on identical episode streams (same
spec seed), so rows differ only in the quantity under study. Reports are
emitted as CSV with a fixed column order; a row plus its recorded config is
enough to regenerate the number.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .alignment_net import (
    AlignmentNetwork,
    AlignmentSource,
    TrainConfig,
    train,
)
from .episodic_protocol import (
    ClassifierKind,
    EpisodeSampler,
    EpisodeSpec,
    EvalReport,
    evaluate,
    reconstruct,
    sample_episode,
    support_mean,
    sweep_k,
)
from .errors import ArgumentError
from .feature_store import FeatureCache, class_centers, cluster_centers
from .semantic_evolution import SemanticEmbeddingSet, SemanticSource

REPORT_COLUMNS = (
    "experiment",
    "dataset",
    "setting",
    "source",
    "classifier",
    "k",
    "mean_accuracy",
    "ci95",
)

SWEEP_COLUMNS = ("k", "mean_accuracy")
GRID_COLUMNS = ("source", "encoder", "mean_accuracy", "ci95")


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    dataset: str
    setting: str
    source: str
    classifier: str
    k: float
    mean_accuracy: float
    ci95: float

    @classmethod
    def from_report(
        cls, experiment: str, dataset: str, report: EvalReport
    ) -> "ReportRow":
        cfg = report.config
        return cls(
            experiment=experiment,
            dataset=dataset,
            setting=f"{cfg['n_way']}-way {cfg['k_shot']}-shot",
            source=cfg.get("source") or "",
            classifier=cfg["classifier"],
            k=cfg["k"],
            mean_accuracy=report.mean_accuracy,
            ci95=report.ci95,
        )


def write_report_rows(rows: list[ReportRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.experiment,
                    row.dataset,
                    row.setting,
                    row.source,
                    row.classifier,
                    repr(row.k),
                    repr(row.mean_accuracy),
                    repr(row.ci95),
                ]
            )


def write_sweep_csv(curve: list[tuple[float, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for k, acc in curve:
            writer.writerow([repr(k), repr(acc)])


def run_ablation_sources(
    cache: FeatureCache,
    embeddings: SemanticEmbeddingSet,
    semantic_source: SemanticSource,
    train_config: TrainConfig,
    spec: EpisodeSpec,
    k: float,
    kind: ClassifierKind = ClassifierKind.COSINE,
    *,
    dataset: str = "",
    episode_fn: EpisodeSampler | None = None,
    train_split: str = "base",
) -> tuple[list[ReportRow], dict[str, AlignmentNetwork]]:
    """Train and evaluate the three input-modality arms on shared episodes.

    Arms differ only in which modalities feed the network (both, visual
    only, semantic only); training seed, targets, and evaluation episodes
    are identical.
    """
    centers = class_centers(cache, train_split)
    rows: list[ReportRow] = []
    nets: dict[str, AlignmentNetwork] = {}
    for arm in (AlignmentSource.V, AlignmentSource.S, AlignmentSource.VS):
        cfg = replace(train_config, alignment_source=arm)
        emb = embeddings if arm is not AlignmentSource.V else None
        src = semantic_source if arm is not AlignmentSource.V else None
        net, _ = train(cache, emb, src, centers, cfg, split=train_split)
        report = evaluate(
            net, cache, emb, spec, k, kind, source=src, episode_fn=episode_fn
        )
        rows.append(ReportRow.from_report(f"sources:{arm.value}", dataset, report))
        nets[arm.value] = net
    return rows, nets


def run_ablation_targets(
    cache: FeatureCache,
    embeddings: SemanticEmbeddingSet | None,
    semantic_source: SemanticSource | None,
    train_config: TrainConfig,
    spec: EpisodeSpec,
    k: float,
    kind: ClassifierKind = ClassifierKind.COSINE,
    *,
    clusters_per_class: int = 2,
    cluster_seed: int = 0,
    dataset: str = "",
    episode_fn: EpisodeSampler | None = None,
    train_split: str = "base",
) -> list[ReportRow]:
    """Mean-center vs largest-cluster-center training targets, same episodes."""
    rows: list[ReportRow] = []
    targets = {
        "mean": class_centers(cache, train_split),
        "cluster": cluster_centers(cache, train_split, clusters_per_class, cluster_seed),
    }
    for name, centers in targets.items():
        net, _ = train(
            cache, embeddings, semantic_source, centers, train_config, split=train_split
        )
        report = evaluate(
            net,
            cache,
            embeddings,
            spec,
            k,
            kind,
            source=semantic_source,
            episode_fn=episode_fn,
        )
        rows.append(ReportRow.from_report(f"targets:{name}", dataset, report))
    return rows


def run_ablation_classifiers(
    net: AlignmentNetwork,
    cache: FeatureCache,
    embeddings: SemanticEmbeddingSet | None,
    semantic_source: SemanticSource | None,
    spec: EpisodeSpec,
    k: float,
    *,
    dataset: str = "",
    episode_fn: EpisodeSampler | None = None,
) -> list[ReportRow]:
    """One trained network scored by each classifier head on shared episodes."""
    rows = []
    for kind in ClassifierKind:
        report = evaluate(
            net,
            cache,
            embeddings,
            spec,
            k,
            kind,
            source=semantic_source,
            episode_fn=episode_fn,
        )
        rows.append(ReportRow.from_report(f"classifiers:{kind.value}", dataset, report))
    return rows


def run_semantic_grid(
    cache: FeatureCache,
    embedding_sets: list[SemanticEmbeddingSet],
    train_config: TrainConfig,
    spec: EpisodeSpec,
    k: float,
    kind: ClassifierKind = ClassifierKind.COSINE,
    *,
    episode_fn: EpisodeSampler | None = None,
    train_split: str = "base",
) -> list[tuple[str, str, float, float]]:
    """(source, encoder, accuracy, ci95) over semantics x encoder sets.

    Each cell trains its own network on that cell's embeddings; all cells
    share episode seeds.
    """
    centers = class_centers(cache, train_split)
    grid: list[tuple[str, str, float, float]] = []
    for embeddings in embedding_sets:
        for source in (
            SemanticSource.NAME_TEMPLATE,
            SemanticSource.DEFINITION,
            SemanticSource.PARAPHRASE,
        ):
            net, _ = train(cache, embeddings, source, centers, train_config,
                           split=train_split)
            report = evaluate(
                net, cache, embeddings, spec, k, kind,
                source=source, episode_fn=episode_fn,
            )
            grid.append(
                (source.value, embeddings.encoder_name,
                 report.mean_accuracy, report.ci95)
            )
    return grid


def write_grid_csv(grid: list[tuple[str, str, float, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_COLUMNS)
        for source, encoder, acc, ci in grid:
            writer.writerow([source, encoder, repr(acc), repr(ci)])


@dataclass
class ProximityReport:
    """How often the network prototype lands nearer the class center than the
    support mean does (strict inequality), over 1-shot episodes."""

    fraction: float
    wins: int
    total: int
    per_episode: list[dict]

    def to_json(self) -> str:
        payload = {
            "fraction": self.fraction,
            "wins": self.wins,
            "total": self.total,
            "per_episode": self.per_episode,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def run_fig5_check(
    net: AlignmentNetwork,
    cache: FeatureCache,
    embeddings: SemanticEmbeddingSet | None,
    semantic_source: SemanticSource | None,
    spec: EpisodeSpec,
    centers: Mapping[int, np.ndarray],
    *,
    episode_fn: EpisodeSampler | None = None,
) -> ProximityReport:
    """Prototype-proximity comparison against reference class centers.

    ``centers`` should be ground-truth centers on synthetic data, or split
    means on real caches. Episodes should be 1-shot for the headline metric.
    """
    sampler = episode_fn or sample_episode
    wins = 0
    total = 0
    detail: list[dict] = []
    for task_index in range(spec.task_count):
        episode = sampler(cache, spec, task_index)
        u = support_mean(episode, cache)
        r = reconstruct(net, episode, cache, embeddings, semantic_source)
        for row, cid in enumerate(episode.class_ids):
            center = np.asarray(centers[int(cid)], dtype=np.float64)
            d_rec = float(np.linalg.norm(r[row] - center))
            d_sup = float(np.linalg.norm(u[row] - center))
            win = d_rec < d_sup
            wins += int(win)
            total += 1
            detail.append(
                {
                    "task": task_index,
                    "class_id": int(cid),
                    "reconstructed_distance": d_rec,
                    "support_distance": d_sup,
                    "closer": win,
                }
            )
    return ProximityReport(
        fraction=wins / total if total else 0.0,
        wins=wins,
        total=total,
        per_episode=detail,
    )


def run_sweep(
    net: AlignmentNetwork,
    cache: FeatureCache,
    embeddings: SemanticEmbeddingSet | None,
    semantic_source: SemanticSource | None,
    spec: EpisodeSpec,
    kind: ClassifierKind,
    step: float = 0.01,
    *,
    episode_fn: EpisodeSampler | None = None,
) -> list[tuple[float, float]]:
    """Fusion-factor sweep; thin wrapper so drivers and the CLI share one path."""
    if step <= 0 or step > 1:
        raise ArgumentError(f"step must lie in (0, 1], got {step}")
    return sweep_k(
        net, cache, embeddings, spec, kind, step,
        source=semantic_source, episode_fn=episode_fn,
    )
