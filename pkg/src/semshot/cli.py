"""Command-line front end.

Subcommands: ``synth``, ``train``, ``eval``, ``sweep``, ``ablate``, ``fig5``,
``semevo``. Every subcommand accepts ``--config FILE`` (TOML); command-line
flags override config values. Exit codes: 0 success, 1 usage error, 2 runtime
error. Only ``semevo`` (without ``--offline``) ever touches the network.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib

from . import experiment_runner as runner
from .alignment_net import (
    AlignmentSource,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .episodic_protocol import (
    ClassifierKind,
    EpisodeSpec,
    evaluate,
)
from .errors import SemshotError
from .feature_store import (
    class_centers,
    cluster_centers,
    load_centers,
    load_class_table,
    read_cache,
    save_centers,
    write_cache,
    FeatureRecord,
)
from .semantic_evolution import (
    DEFAULT_NAME_TEMPLATE,
    LlmConfig,
    SemanticSource,
    build_corpus,
    load_definitions,
    load_semantic_embeddings,
    save_corpus,
    store_semantic_embeddings,
)
from .synthetic import SyntheticSpec, gen_synthetic, periphery_sampler


class UsageError(Exception):
    """Bad flags or flag values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _pick(flag: Any, config: Mapping, section: str, key: str, default: Any) -> Any:
    if flag is not None:
        return flag
    return config.get(section, {}).get(key, default)


def _episode_spec(args: argparse.Namespace, config: Mapping) -> EpisodeSpec:
    return EpisodeSpec(
        n_way=int(_pick(args.n_way, config, "episodes", "n_way", 5)),
        k_shot=int(_pick(args.k_shot, config, "episodes", "k_shot", 1)),
        m_query=int(_pick(args.m_query, config, "episodes", "m_query", 15)),
        task_count=int(_pick(args.tasks, config, "episodes", "tasks", 600)),
        split=str(_pick(args.split, config, "episodes", "split", "novel")),
        seed=int(_pick(args.seed, config, "episodes", "seed", 0)),
    )


def _train_config(args: argparse.Namespace, config: Mapping) -> TrainConfig:
    return TrainConfig(
        epochs=int(_pick(args.epochs, config, "train", "epochs", 50)),
        batch_size=int(_pick(args.batch_size, config, "train", "batch_size", 128)),
        learning_rate=float(
            _pick(args.learning_rate, config, "train", "learning_rate", 1e-4)
        ),
        hidden_dim=int(_pick(args.hidden_dim, config, "train", "hidden_dim", 4096)),
        seed=int(_pick(args.seed, config, "train", "seed", 0)),
        alignment_source=AlignmentSource(
            _pick(args.alignment, config, "train", "alignment", "vs")
        ),
        leaky_slope=float(_pick(None, config, "train", "leaky_slope", 0.01)),
        use_bias=bool(_pick(None, config, "train", "use_bias", True)),
    )


def _fusion_factor(args: argparse.Namespace, config: Mapping) -> float:
    k = float(_pick(args.k, config, "eval", "k", 0.0))
    if not 0.0 <= k <= 1.0:
        raise UsageError(f"--k must lie in [0, 1], got {k}")
    return k


def _classifier(args: argparse.Namespace, config: Mapping) -> ClassifierKind:
    value = _pick(args.classifier, config, "eval", "classifier", "cosine")
    try:
        return ClassifierKind(value)
    except ValueError:
        raise UsageError(f"unknown classifier {value!r}") from None


def _semantic_source(
    args: argparse.Namespace, config: Mapping, default: str | None = "paraphrase"
) -> SemanticSource | None:
    value = _pick(args.source, config, "eval", "source", default)
    if value is None:
        return None
    try:
        return SemanticSource(value)
    except ValueError:
        raise UsageError(f"unknown semantic source {value!r}") from None


def _episode_fn(args: argparse.Namespace, config: Mapping):
    bias = float(_pick(args.periphery_bias, config, "eval", "periphery_bias", 0.0))
    if bias == 0.0:
        return None
    centers_path = _pick(args.centers, config, "paths", "centers", None)
    if not centers_path:
        raise UsageError("--periphery-bias needs --centers (ground-truth centers JSON)")
    return periphery_sampler(load_centers(centers_path), bias)


def _require(value: Any, flag: str) -> Any:
    if value is None:
        raise UsageError(f"missing required option {flag}")
    return value


def _load_inputs(args: argparse.Namespace, config: Mapping, *, need_semantics: bool):
    cache_path = _require(_pick(args.cache, config, "paths", "cache", None), "--cache")
    _, cache = read_cache(cache_path)
    semantics = None
    sem_path = _pick(args.semantics, config, "paths", "semantics", None)
    if sem_path:
        semantics = load_semantic_embeddings(sem_path)
    elif need_semantics:
        raise UsageError("missing required option --semantics")
    return cache, semantics


def _cmd_synth(args: argparse.Namespace, config: Mapping) -> int:
    out_dir = Path(_require(_pick(args.out, config, "paths", "output_dir", None), "--out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    syn = config.get("synthetic", {})
    spec = SyntheticSpec(
        base_classes=int(_pick(args.base_classes, config, "synthetic", "base_classes", 20)),
        novel_classes=int(
            _pick(args.novel_classes, config, "synthetic", "novel_classes", 5)
        ),
        samples_per_class=int(
            _pick(args.samples_per_class, config, "synthetic", "samples_per_class", 200)
        ),
        visual_dim=int(_pick(args.visual_dim, config, "synthetic", "visual_dim", 64)),
        text_dim=int(_pick(args.text_dim, config, "synthetic", "text_dim", 32)),
        center_scale=float(
            _pick(args.center_scale, config, "synthetic", "center_scale", 1.0)
        ),
        noise_sigma=float(_pick(args.noise_sigma, config, "synthetic", "noise_sigma", 0.5)),
        seed=int(_pick(args.seed, config, "synthetic", "seed", 0)),
        semantic_map_seed=int(syn.get("semantic_map_seed", 7)),
        center_rank=syn.get("center_rank"),
        center_tail=float(syn.get("center_tail", 0.1)),
        periphery_bias=float(syn.get("periphery_bias", 0.0)),
    )
    cache, embeddings, truth = gen_synthetic(spec)
    records = [
        FeatureRecord(int(cid), vec)
        for cid, vec in zip(cache.class_ids, cache.vectors)
    ]
    write_cache(cache.header, records, out_dir / "cache.sfew")
    store_semantic_embeddings(embeddings, out_dir / "semantics.json")
    save_centers(truth, out_dir / "centers.json")
    print(f"wrote {out_dir / 'cache.sfew'} ({cache.record_count} records), "
          f"semantics.json, centers.json")
    return 0


def _cmd_train(args: argparse.Namespace, config: Mapping) -> int:
    cfg = _train_config(args, config)
    need_sem = cfg.alignment_source is not AlignmentSource.V
    cache, semantics = _load_inputs(args, config, need_semantics=need_sem)
    source = _semantic_source(args, config) if need_sem else None
    targets_kind = _pick(args.targets, config, "train", "targets", "mean")
    split = str(_pick(None, config, "train", "split", "base"))
    if targets_kind == "mean":
        centers = class_centers(cache, split)
    elif targets_kind == "cluster":
        clusters = int(_pick(args.clusters, config, "train", "clusters_per_class", 2))
        centers = cluster_centers(cache, split, clusters, cfg.seed)
    else:
        raise UsageError(f"--targets must be 'mean' or 'cluster', got {targets_kind!r}")
    net, losses = train(cache, semantics, source, centers, cfg, split=split)
    out = _require(_pick(args.out, config, "paths", "checkpoint", None), "--out")
    save_checkpoint(
        net,
        out,
        extra={
            "seed": cfg.seed,
            "targets": targets_kind,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "semantic_source": source.value if source else None,
            "train_split": split,
        },
    )
    if args.losses:
        with open(args.losses, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss\n")
            for i, loss in enumerate(losses, start=1):
                fh.write(f"{i},{loss!r}\n")
    print(f"trained {cfg.epochs} epochs; final mean loss {losses[-1]:.6f}; "
          f"checkpoint at {out}")
    return 0


def _cmd_eval(args: argparse.Namespace, config: Mapping) -> int:
    k = _fusion_factor(args, config)
    kind = _classifier(args, config)
    spec = _episode_spec(args, config)
    ckpt = _pick(args.ckpt, config, "paths", "checkpoint", None)
    net = load_checkpoint(ckpt) if ckpt else None
    need_sem = net is not None and net.source is not AlignmentSource.V
    cache, semantics = _load_inputs(args, config, need_semantics=need_sem)
    source = _semantic_source(args, config) if need_sem else None
    report = evaluate(
        net, cache, semantics, spec, k, kind,
        source=source, episode_fn=_episode_fn(args, config),
    )
    out = _pick(args.out, config, "paths", "report", None)
    if out:
        report.save(out)
    print(f"mean accuracy {report.mean_accuracy:.4f} +/- {report.ci95:.4f} "
          f"over {spec.task_count} tasks"
          + (f"; report at {out}" if out else ""))
    return 0


def _cmd_sweep(args: argparse.Namespace, config: Mapping) -> int:
    kind = _classifier(args, config)
    spec = _episode_spec(args, config)
    ckpt = _require(_pick(args.ckpt, config, "paths", "checkpoint", None), "--ckpt")
    net = load_checkpoint(ckpt)
    need_sem = net.source is not AlignmentSource.V
    cache, semantics = _load_inputs(args, config, need_semantics=need_sem)
    source = _semantic_source(args, config) if need_sem else None
    step = float(_pick(args.step, config, "eval", "sweep_step", 0.01))
    curve = runner.run_sweep(
        net, cache, semantics, source, spec, kind, step,
        episode_fn=_episode_fn(args, config),
    )
    out = _require(_pick(args.out, config, "paths", "sweep", None), "--out")
    runner.write_sweep_csv(curve, out)
    best_k, best_acc = max(curve, key=lambda p: p[1])
    print(f"{len(curve)} grid points; best k={best_k:.2f} "
          f"at accuracy {best_acc:.4f}; curve at {out}")
    return 0


def _cmd_ablate(args: argparse.Namespace, config: Mapping) -> int:
    spec = _episode_spec(args, config)
    k = _fusion_factor(args, config)
    kind = _classifier(args, config)
    episode_fn = _episode_fn(args, config)
    dataset = str(_pick(None, config, "eval", "dataset", ""))
    out = _require(_pick(args.out, config, "paths", "report", None), "--out")

    if args.what == "sources":
        cache, semantics = _load_inputs(args, config, need_semantics=True)
        source = _semantic_source(args, config)
        rows, _ = runner.run_ablation_sources(
            cache, semantics, source, _train_config(args, config), spec, k, kind,
            dataset=dataset, episode_fn=episode_fn,
        )
        runner.write_report_rows(rows, out)
    elif args.what == "targets":
        cfg = _train_config(args, config)
        need_sem = cfg.alignment_source is not AlignmentSource.V
        cache, semantics = _load_inputs(args, config, need_semantics=need_sem)
        source = _semantic_source(args, config) if need_sem else None
        clusters = int(_pick(args.clusters, config, "train", "clusters_per_class", 2))
        rows = runner.run_ablation_targets(
            cache, semantics, source, cfg, spec, k, kind,
            clusters_per_class=clusters, cluster_seed=cfg.seed,
            dataset=dataset, episode_fn=episode_fn,
        )
        runner.write_report_rows(rows, out)
    elif args.what == "classifiers":
        ckpt = _require(_pick(args.ckpt, config, "paths", "checkpoint", None), "--ckpt")
        net = load_checkpoint(ckpt)
        need_sem = net.source is not AlignmentSource.V
        cache, semantics = _load_inputs(args, config, need_semantics=need_sem)
        source = _semantic_source(args, config) if need_sem else None
        rows = runner.run_ablation_classifiers(
            net, cache, semantics, source, spec, k,
            dataset=dataset, episode_fn=episode_fn,
        )
        runner.write_report_rows(rows, out)
    elif args.what == "semantics":
        cache, _ = _load_inputs(args, config, need_semantics=False)
        paths = args.semantics_sets or config.get("paths", {}).get("semantics_sets")
        if not paths:
            raise UsageError("ablate semantics needs --semantics-sets FILE [FILE ...]")
        sets = [load_semantic_embeddings(p) for p in paths]
        grid = runner.run_semantic_grid(
            cache, sets, _train_config(args, config), spec, k, kind,
            episode_fn=episode_fn,
        )
        runner.write_grid_csv(grid, out)
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown ablation {args.what!r}")
    print(f"ablation {args.what!r} written to {out}")
    return 0


def _cmd_fig5(args: argparse.Namespace, config: Mapping) -> int:
    spec = _episode_spec(args, config)
    ckpt = _require(_pick(args.ckpt, config, "paths", "checkpoint", None), "--ckpt")
    net = load_checkpoint(ckpt)
    need_sem = net.source is not AlignmentSource.V
    cache, semantics = _load_inputs(args, config, need_semantics=need_sem)
    source = _semantic_source(args, config) if need_sem else None
    centers_path = _pick(args.centers, config, "paths", "centers", None)
    if centers_path:
        centers = load_centers(centers_path)
    else:
        centers = class_centers(cache, spec.split)
    report = runner.run_fig5_check(
        net, cache, semantics, source, spec, centers,
        episode_fn=_episode_fn(args, config),
    )
    out = _pick(args.out, config, "paths", "report", None)
    if out:
        report.save(out)
    print(f"reconstructed prototype closer to center in "
          f"{report.fraction:.3f} of {report.total} cases"
          + (f"; detail at {out}" if out else ""))
    return 0


def _cmd_semevo(args: argparse.Namespace, config: Mapping) -> int:
    out = _require(args.out, "--out")
    definitions = load_definitions(_require(args.definitions, "--definitions"))
    class_table = load_class_table(_require(args.classes, "--classes"))
    llm_cfg = config.get("llm", {})
    llm = LlmConfig(
        endpoint_url=str(
            _pick(args.endpoint, config, "llm", "endpoint",
                  "https://api.openai.com/v1/chat/completions")
        ),
        model_name=str(_pick(args.model, config, "llm", "model", "gpt-3.5-turbo")),
        api_key_env_var=str(
            _pick(args.api_key_env, config, "llm", "api_key_env", "SEMSHOT_API_KEY")
        ),
        max_retries=int(llm_cfg.get("max_retries", 3)),
        timeout_seconds=float(llm_cfg.get("timeout_seconds", 30.0)),
        temperature=float(llm_cfg.get("temperature", 0.0)),
    )
    cache_dir = _pick(args.cache_dir, config, "paths", "paraphrase_cache", None)
    if cache_dir is None:
        cache_dir = Path(out).with_suffix(".cache")
    entries = build_corpus(
        class_table,
        definitions,
        llm,
        cache_dir,
        offline=args.offline,
        name_template=str(
            _pick(args.name_template, config, "llm", "name_template",
                  DEFAULT_NAME_TEMPLATE)
        ),
    )
    save_corpus(entries, out)
    print(f"wrote {len(entries)} class descriptions to {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="semshot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: _Parser) -> None:
        p.add_argument("--config", help="TOML config file; flags override it")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tasks", type=int, default=None)
        p.add_argument("--k", type=float, default=None, help="fusion factor in [0, 1]")
        p.add_argument("--classifier", default=None,
                       choices=[c.value for c in ClassifierKind])
        p.add_argument("--source", default=None,
                       choices=[s.value for s in SemanticSource])
        p.add_argument("--n-way", dest="n_way", type=int, default=None)
        p.add_argument("--k-shot", dest="k_shot", type=int, default=None)
        p.add_argument("--m-query", dest="m_query", type=int, default=None)
        p.add_argument("--split", default=None)
        p.add_argument("--cache", default=None, help="feature cache (.sfew)")
        p.add_argument("--semantics", default=None, help="semantic embeddings JSON")
        p.add_argument("--centers", default=None, help="reference centers JSON")
        p.add_argument("--periphery-bias", dest="periphery_bias", type=float,
                       default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p_synth)
    p_synth.add_argument("--out", default=None, help="output directory")
    for flag in ("base-classes", "novel-classes", "samples-per-class",
                 "visual-dim", "text-dim"):
        p_synth.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=int,
                             default=None)
    p_synth.add_argument("--center-scale", dest="center_scale", type=float,
                         default=None)
    p_synth.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p_synth.set_defaults(func=_cmd_synth)

    def add_train_flags(p: _Parser) -> None:
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--lr", dest="learning_rate", type=float, default=None)
        p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
        p.add_argument("--alignment", default=None,
                       choices=[s.value for s in AlignmentSource])
        p.add_argument("--targets", default=None, choices=["mean", "cluster"])
        p.add_argument("--clusters", type=int, default=None)

    p_train = sub.add_parser("train", help="fit the alignment network")
    add_common(p_train)
    add_train_flags(p_train)
    p_train.add_argument("--out", default=None, help="checkpoint path")
    p_train.add_argument("--losses", default=None, help="per-epoch loss CSV")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="episodic evaluation")
    add_common(p_eval)
    p_eval.add_argument("--ckpt", default=None, help="checkpoint; omit for baseline")
    p_eval.add_argument("--out", default=None, help="report JSON path")
    p_eval.set_defaults(func=_cmd_eval)

    p_sweep = sub.add_parser("sweep", help="fusion-factor sweep")
    add_common(p_sweep)
    p_sweep.add_argument("--ckpt", default=None)
    p_sweep.add_argument("--step", type=float, default=None)
    p_sweep.add_argument("--out", default=None, help="curve CSV path")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_ablate = sub.add_parser("ablate", help="ablation drivers")
    p_ablate.add_argument("what",
                          choices=["sources", "targets", "classifiers", "semantics"])
    add_common(p_ablate)
    add_train_flags(p_ablate)
    p_ablate.add_argument("--ckpt", default=None)
    p_ablate.add_argument("--semantics-sets", dest="semantics_sets", nargs="+",
                          default=None)
    p_ablate.add_argument("--out", default=None, help="CSV path")
    p_ablate.set_defaults(func=_cmd_ablate)

    p_fig5 = sub.add_parser("fig5", help="prototype-proximity check")
    add_common(p_fig5)
    p_fig5.add_argument("--ckpt", default=None)
    p_fig5.add_argument("--out", default=None, help="report JSON path")
    p_fig5.set_defaults(func=_cmd_fig5)

    p_semevo = sub.add_parser("semevo", help="build class descriptions via the LLM")
    p_semevo.add_argument("--config", help="TOML config file; flags override it")
    p_semevo.add_argument("--definitions", default=None,
                          help="JSON {class_id: definition}")
    p_semevo.add_argument("--classes", default=None,
                          help="JSON {class_id: {name, wordnet_key}}")
    p_semevo.add_argument("--out", default=None, help="corpus JSON path")
    p_semevo.add_argument("--offline", action="store_true",
                          help="forbid network; fail on cache miss")
    p_semevo.add_argument("--cache-dir", dest="cache_dir", default=None)
    p_semevo.add_argument("--endpoint", default=None)
    p_semevo.add_argument("--model", default=None)
    p_semevo.add_argument("--api-key-env", dest="api_key_env", default=None)
    p_semevo.add_argument("--name-template", dest="name_template", default=None)
    p_semevo.set_defaults(func=_cmd_semevo)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(getattr(args, "config", None))
        return args.func(args, config)
    except UsageError as exc:
        print(f"semshot: usage error: {exc}", file=sys.stderr)
        return 1
    except (SemshotError, OSError) as exc:
        print(f"semshot: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
