from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from semshot.alignment_net import AlignmentSource, TrainConfig, init_network, train
from semshot.cli import main
from semshot.episodic_protocol import ClassifierKind, EpisodeSpec
from semshot.experiment_runner import (
    REPORT_COLUMNS,
    run_ablation_classifiers,
    run_ablation_sources,
    run_ablation_targets,
    run_fig5_check,
    run_semantic_grid,
    run_sweep,
    write_grid_csv,
    write_report_rows,
    write_sweep_csv,
)
from semshot.feature_store import class_centers
from semshot.semantic_evolution import SemanticSource
from semshot.synthetic import SyntheticSpec, gen_synthetic, periphery_sampler


@pytest.fixture(scope="module")
def setup():
    spec = SyntheticSpec(
        base_classes=6,
        novel_classes=4,
        samples_per_class=60,
        visual_dim=12,
        text_dim=6,
        noise_sigma=0.5,
        center_rank=4,
        seed=2,
    )
    cache, emb, truth = gen_synthetic(spec)
    episode_spec = EpisodeSpec(n_way=3, k_shot=1, m_query=4, task_count=12,
                               split="novel", seed=31)
    train_cfg = TrainConfig(epochs=4, batch_size=32, learning_rate=1e-4,
                            hidden_dim=24, seed=0)
    return cache, emb, truth, episode_spec, train_cfg


def test_sources_ablation_emits_three_arms(setup, tmp_path):
    cache, emb, _, spec, cfg = setup
    rows, nets = run_ablation_sources(
        cache, emb, SemanticSource.PARAPHRASE, cfg, spec, 0.5
    )
    assert [r.experiment for r in rows] == ["sources:v", "sources:s", "sources:vs"]
    assert set(nets) == {"v", "s", "vs"}
    assert all(r.setting == "3-way 1-shot" for r in rows)
    out = tmp_path / "sources.csv"
    write_report_rows(rows, out)
    with open(out) as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == list(REPORT_COLUMNS)
    assert len(parsed) == 4


def test_targets_ablation_identical_for_single_cluster(setup):
    cache, emb, _, spec, cfg = setup
    rows = run_ablation_targets(
        cache, emb, SemanticSource.PARAPHRASE, cfg, spec, 0.5, clusters_per_class=1
    )
    assert [r.experiment for r in rows] == ["targets:mean", "targets:cluster"]
    assert rows[0].mean_accuracy == rows[1].mean_accuracy
    assert rows[0].ci95 == rows[1].ci95


def test_classifier_ablation_covers_all_heads(setup):
    cache, emb, _, spec, cfg = setup
    net = init_network(cache.visual_dim, emb.text_dim, cfg.hidden_dim, seed=0)
    rows = run_ablation_classifiers(
        net, cache, emb, SemanticSource.PARAPHRASE, spec, 0.5
    )
    assert [r.classifier for r in rows] == ["cosine", "euclidean", "lr"]


def test_semantic_grid_on_one_encoder_has_three_rows(setup, tmp_path):
    cache, emb, _, spec, cfg = setup
    grid = run_semantic_grid(cache, [emb], cfg, spec, 0.5)
    assert len(grid) == 3
    assert [row[0] for row in grid] == ["name", "definition", "paraphrase"]
    assert all(row[1] == emb.encoder_name for row in grid)
    out = tmp_path / "grid.csv"
    write_grid_csv(grid, out)
    with open(out) as fh:
        assert len(list(csv.reader(fh))) == 4


def test_sweep_csv_has_101_rows(setup, tmp_path):
    cache, emb, _, spec, cfg = setup
    net = init_network(cache.visual_dim, emb.text_dim, cfg.hidden_dim, seed=1)
    curve = run_sweep(net, cache, emb, SemanticSource.PARAPHRASE, spec,
                      ClassifierKind.COSINE, 0.01)
    out = tmp_path / "sweep.csv"
    write_sweep_csv(curve, out)
    with open(out) as fh:
        parsed = list(csv.reader(fh))
    assert len(parsed) == 102
    assert parsed[0] == ["k", "mean_accuracy"]


def test_fig5_fraction_in_unit_interval_for_random_net(setup):
    cache, emb, truth, spec, cfg = setup
    net = init_network(cache.visual_dim, emb.text_dim, cfg.hidden_dim, seed=2)
    report = run_fig5_check(net, cache, emb, SemanticSource.PARAPHRASE, spec, truth)
    assert 0.0 <= report.fraction <= 1.0
    assert report.total == spec.task_count * spec.n_way
    assert len(report.per_episode) == report.total


def test_fig5_zero_noise_gives_zero_fraction():
    spec = SyntheticSpec(
        base_classes=4, novel_classes=3, samples_per_class=20, visual_dim=8,
        text_dim=4, noise_sigma=0.0, center_rank=3, seed=4,
    )
    cache, emb, truth = gen_synthetic(spec)
    centers = class_centers(cache, "base")
    cfg = TrainConfig(epochs=2, batch_size=16, learning_rate=1e-4, hidden_dim=16, seed=0)
    net, _ = train(cache, emb, SemanticSource.PARAPHRASE, centers, cfg)
    episode_spec = EpisodeSpec(n_way=3, k_shot=1, m_query=2, task_count=8,
                               split="novel", seed=5)
    report = run_fig5_check(net, cache, emb, SemanticSource.PARAPHRASE,
                            episode_spec, truth)
    # The support IS the center; strict inequality can never hold.
    assert report.fraction == 0.0


def test_fig5_report_json_round_trip(setup, tmp_path):
    cache, emb, truth, spec, cfg = setup
    net = init_network(cache.visual_dim, emb.text_dim, cfg.hidden_dim, seed=3)
    report = run_fig5_check(net, cache, emb, SemanticSource.PARAPHRASE, spec, truth)
    path = tmp_path / "fig5.json"
    report.save(path)
    payload = json.loads(path.read_text())
    assert payload["fraction"] == report.fraction
    assert payload["total"] == report.total


def test_ablation_arms_share_episode_streams(setup):
    """Rows produced under the same episode spec must describe identical
    episodes; equal settings and task counts witness the shared stream."""
    cache, emb, _, spec, cfg = setup
    rows = run_ablation_targets(
        cache, emb, SemanticSource.PARAPHRASE, cfg, spec, 0.0, clusters_per_class=1
    )
    assert all(r.setting == f"{spec.n_way}-way {spec.k_shot}-shot" for r in rows)
    assert all(r.k == 0.0 for r in rows)


# --- CLI --------------------------------------------------------------------


def run_cli(*argv: str) -> int:
    return main(list(argv))


@pytest.fixture()
def synth_dir(tmp_path):
    out = tmp_path / "data"
    code = run_cli(
        "synth", "--out", str(out),
        "--base-classes", "6", "--novel-classes", "4",
        "--samples-per-class", "40", "--visual-dim", "12", "--text-dim", "6",
        "--noise-sigma", "0.5", "--seed", "2",
    )
    assert code == 0
    return out


def test_cli_synth_train_eval_end_to_end(synth_dir, tmp_path, capsys):
    ckpt = tmp_path / "net.ckpt"
    code = run_cli(
        "train", "--cache", str(synth_dir / "cache.sfew"),
        "--semantics", str(synth_dir / "semantics.json"),
        "--out", str(ckpt), "--epochs", "3", "--batch-size", "32",
        "--hidden-dim", "16", "--seed", "0",
    )
    assert code == 0
    assert ckpt.exists()
    report = tmp_path / "report.json"
    code = run_cli(
        "eval", "--cache", str(synth_dir / "cache.sfew"),
        "--semantics", str(synth_dir / "semantics.json"),
        "--ckpt", str(ckpt), "--k", "0.5", "--classifier", "cosine",
        "--tasks", "10", "--n-way", "3", "--m-query", "4", "--seed", "7",
        "--out", str(report),
    )
    assert code == 0
    payload = json.loads(report.read_text())
    assert 0.0 <= payload["mean_accuracy"] <= 1.0
    assert len(payload["per_task_accuracy"]) == 10


def test_cli_eval_baseline_without_checkpoint(synth_dir, tmp_path):
    report = tmp_path / "base.json"
    code = run_cli(
        "eval", "--cache", str(synth_dir / "cache.sfew"),
        "--k", "0", "--tasks", "5", "--n-way", "3", "--m-query", "2",
        "--out", str(report),
    )
    assert code == 0
    assert report.exists()


def test_cli_rejects_out_of_range_fusion_factor(synth_dir):
    code = run_cli(
        "eval", "--cache", str(synth_dir / "cache.sfew"), "--k", "1.5",
    )
    assert code == 1


def test_cli_rejects_unknown_flag():
    assert run_cli("eval", "--not-a-flag", "1") == 1


def test_cli_missing_file_is_runtime_error(tmp_path):
    code = run_cli("eval", "--cache", str(tmp_path / "absent.sfew"), "--k", "0")
    assert code == 2


def test_cli_ablate_sources_emits_three_row_csv(synth_dir, tmp_path):
    out = tmp_path / "sources.csv"
    code = run_cli(
        "ablate", "sources",
        "--cache", str(synth_dir / "cache.sfew"),
        "--semantics", str(synth_dir / "semantics.json"),
        "--out", str(out), "--epochs", "2", "--batch-size", "32",
        "--hidden-dim", "16", "--tasks", "6", "--n-way", "3", "--m-query", "2",
        "--k", "0.5",
    )
    assert code == 0
    with open(out) as fh:
        parsed = list(csv.reader(fh))
    assert len(parsed) == 4  # header + V, S, VS


def test_cli_sweep_and_fig5(synth_dir, tmp_path):
    ckpt = tmp_path / "net.ckpt"
    assert run_cli(
        "train", "--cache", str(synth_dir / "cache.sfew"),
        "--semantics", str(synth_dir / "semantics.json"),
        "--out", str(ckpt), "--epochs", "2", "--batch-size", "32",
        "--hidden-dim", "16",
    ) == 0
    sweep_csv = tmp_path / "sweep.csv"
    assert run_cli(
        "sweep", "--cache", str(synth_dir / "cache.sfew"),
        "--semantics", str(synth_dir / "semantics.json"),
        "--ckpt", str(ckpt), "--out", str(sweep_csv),
        "--tasks", "4", "--n-way", "3", "--m-query", "2", "--step", "0.25",
    ) == 0
    with open(sweep_csv) as fh:
        assert len(list(csv.reader(fh))) == 6  # header + 5 grid points
    fig5_json = tmp_path / "fig5.json"
    assert run_cli(
        "fig5", "--cache", str(synth_dir / "cache.sfew"),
        "--semantics", str(synth_dir / "semantics.json"),
        "--ckpt", str(ckpt), "--centers", str(synth_dir / "centers.json"),
        "--out", str(fig5_json), "--tasks", "4", "--n-way", "3", "--m-query", "2",
    ) == 0
    assert 0.0 <= json.loads(fig5_json.read_text())["fraction"] <= 1.0


def test_cli_config_file_with_flag_overrides(synth_dir, tmp_path):
    config = tmp_path / "run.toml"
    config.write_text(
        "\n".join(
            [
                "[paths]",
                f'cache = "{synth_dir / "cache.sfew"}"',
                "[episodes]",
                "n_way = 3",
                "m_query = 2",
                "tasks = 4",
                "[eval]",
                "k = 0.0",
            ]
        )
    )
    report = tmp_path / "cfg-report.json"
    code = run_cli("eval", "--config", str(config), "--tasks", "6",
                   "--out", str(report))
    assert code == 0
    payload = json.loads(report.read_text())
    assert payload["config"]["task_count"] == 6  # flag wins over config
    assert payload["config"]["n_way"] == 3


def test_cli_periphery_eval_uses_centers(synth_dir, tmp_path):
    report = tmp_path / "p.json"
    code = run_cli(
        "eval", "--cache", str(synth_dir / "cache.sfew"),
        "--k", "0", "--tasks", "5", "--n-way", "3", "--m-query", "2",
        "--periphery-bias", "1.0", "--centers", str(synth_dir / "centers.json"),
        "--out", str(report),
    )
    assert code == 0


def test_cli_periphery_without_centers_is_usage_error(synth_dir):
    code = run_cli(
        "eval", "--cache", str(synth_dir / "cache.sfew"),
        "--k", "0", "--periphery-bias", "0.5",
    )
    assert code == 1


def test_cli_determinism_byte_identical_reports(tmp_path):
    reports = []
    for run in ("a", "b"):
        base = tmp_path / run
        data = base / "data"
        assert run_cli(
            "synth", "--out", str(data),
            "--base-classes", "5", "--novel-classes", "3",
            "--samples-per-class", "30", "--visual-dim", "10", "--text-dim", "5",
            "--seed", "3",
        ) == 0
        ckpt = base / "net.ckpt"
        assert run_cli(
            "train", "--cache", str(data / "cache.sfew"),
            "--semantics", str(data / "semantics.json"),
            "--out", str(ckpt), "--epochs", "2", "--batch-size", "16",
            "--hidden-dim", "12", "--seed", "1",
        ) == 0
        report = base / "report.json"
        assert run_cli(
            "eval", "--cache", str(data / "cache.sfew"),
            "--semantics", str(data / "semantics.json"),
            "--ckpt", str(ckpt), "--k", "0.5", "--tasks", "6",
            "--n-way", "3", "--m-query", "2", "--seed", "4",
            "--out", str(report),
        ) == 0
        reports.append(report.read_bytes())
    assert reports[0] == reports[1]


def test_cli_semevo_offline_roundtrip(tmp_path, llm_server):
    definitions = tmp_path / "definitions.json"
    definitions.write_text(json.dumps({"0": "a horse with stripes"}))
    classes = tmp_path / "classes.json"
    classes.write_text(json.dumps({"0": {"name": "zebra", "wordnet_key": None}}))
    corpus = tmp_path / "corpus.json"
    cache_dir = tmp_path / "cache"

    llm_server.set_script([(200, "a rich zebra paragraph")])
    code = run_cli(
        "semevo", "--definitions", str(definitions), "--classes", str(classes),
        "--out", str(corpus), "--cache-dir", str(cache_dir),
        "--endpoint", llm_server.url, "--model", "test-model",
    )
    assert code == 0
    assert llm_server.request_count == 1

    offline_corpus = tmp_path / "corpus2.json"
    code = run_cli(
        "semevo", "--definitions", str(definitions), "--classes", str(classes),
        "--out", str(offline_corpus), "--cache-dir", str(cache_dir),
        "--endpoint", llm_server.url, "--model", "test-model", "--offline",
    )
    assert code == 0
    assert llm_server.request_count == 1  # no new network traffic
    payload = json.loads(offline_corpus.read_text())
    assert payload[0]["paraphrase"] == "a rich zebra paragraph"


def test_cli_semevo_offline_cache_miss_fails(tmp_path):
    definitions = tmp_path / "definitions.json"
    definitions.write_text(json.dumps({"0": "a horse with stripes"}))
    classes = tmp_path / "classes.json"
    classes.write_text(json.dumps({"0": {"name": "zebra", "wordnet_key": None}}))
    code = run_cli(
        "semevo", "--definitions", str(definitions), "--classes", str(classes),
        "--out", str(tmp_path / "c.json"), "--cache-dir", str(tmp_path / "empty"),
        "--endpoint", "http://127.0.0.1:1", "--offline",
    )
    assert code == 2
