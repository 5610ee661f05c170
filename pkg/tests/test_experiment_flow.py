import json
import time

import pytest
import numpy as np
import pandas as pd

from ialora_hub.__main__ import main
from ialora_hub.data_preprocessing import (
    ConfigurationError,
    configuration_values,
    load_configuration,
    set_config_value,
)
from ialora_hub.diagnostics import check_gradients, check_gradients_over_seeds
from ialora_hub.evaluation import head_drop_summary, primary_drop_table
from ialora_hub.experimenthub import ExperimentHub, run_ablation, run_seeds
from tests.utilities import make_tiny_experiment_config, save_json


def _run(config) -> ExperimentHub:
    hub = ExperimentHub()
    hub.read_data(config)
    hub.run()
    return hub


@pytest.mark.experiment
def test_dry_run(request):
    """
    A dry run only evaluates and traces the initial model
    """
    config = make_tiny_experiment_config(
        request.config.result_folder_path, training__dry_run=1
    )
    hub = _run(config)
    report = hub.report
    assert report.metrics is None and not report.loss_curve
    assert set(report.initial_metrics.counts.values()) == {3}
    assert set(report.initial_router["profiles"]) == set(
        report.initial_metrics.metrics
    )
    assert not report.router

    folder = hub.result_folder_path
    assert folder == request.config.result_folder_path / "tiny"
    for name in ("report.json", "timing.json", "config.json", "metrics.csv"):
        assert (folder / name).exists(), name
    assert (folder / "checkpoint.h5").exists()
    assert not (folder / "loss_curve.csv").exists()
    assert (folder / "traces.jsonl").exists()
    saved = json.loads((folder / "report.json").read_text())
    assert saved["initial_router"] == report.initial_router


@pytest.mark.experiment
def test_full_run_writes_results(request):
    """
    Tests the full pipeline with a tiny model: data generation, training,
    evaluation, router analysis, head drop and result files

    The following is checked:
    - one loss curve entry per step
    - every family is evaluated
    - one head-drop row set per dropped head and the reference
    - the checkpoint reproduces the evaluated model
    """
    config = make_tiny_experiment_config(
        request.config.result_folder_path, reporting__mask_examples=1
    )
    hub = _run(config)
    report = hub.report
    folder = hub.result_folder_path

    assert [r["step"] for r in report.loss_curve] == [1, 2, 3, 4]
    assert all(np.isfinite(r["loss"]) for r in report.loss_curve)
    assert sorted(report.metrics.metrics) == sorted(
        ["temporal", "spatial", "reasoning", "segmentation"]
    )
    assert set(report.head_drop["dropped_head"]) == {"none", "0", "1", "2"}
    assert set(report.router["profiles"]) == set(report.metrics.metrics)

    for name in (
        "report.json",
        "timing.json",
        "config.json",
        "metrics.csv",
        "loss_curve.csv",
        "head_drop.csv",
        "traces.jsonl",
        "checkpoint.h5",
        "masks/mask_000_c0.pgm",
        "masks/mask_000_c0.json",
    ):
        assert (folder / name).exists(), name
    curve = pd.read_csv(folder / "loss_curve.csv")
    assert len(curve) == 4
    assert json.loads((folder / "config.json").read_text())["training"]["steps"] == 4

    loaded = ExperimentHub()
    loaded.load_model(folder / "checkpoint.h5")
    assert loaded.model_config == hub.model_config
    assert loaded.evaluate(hub.eval_suite).metrics == report.metrics.metrics


@pytest.mark.experiment
def test_runs_are_reproducible(request):
    config = make_tiny_experiment_config(
        request.config.result_folder_path,
        training__steps=2,
        analysis__head_drop=0,
        reporting__write_scatter=0,
    )
    first = _run(config).result_folder_path
    second = _run(config).result_folder_path
    assert first != second
    assert second.name == "tiny_1"
    for name in ("report.json", "traces.jsonl", "metrics.csv", "checkpoint.h5"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name

    other = make_tiny_experiment_config(
        request.config.result_folder_path,
        experiment__seed=1,
        training__steps=2,
        analysis__head_drop=0,
    )
    third = _run(other).result_folder_path
    assert (third / "report.json").read_bytes() != (first / "report.json").read_bytes()


@pytest.mark.experiment
def test_run_seeds():
    seeds = run_seeds(0)
    assert list(seeds) == ["train_data", "eval_data", "init", "batches"]
    assert len(set(seeds.values())) == 4
    assert run_seeds(0) == seeds
    assert run_seeds(1) != seeds


@pytest.mark.experiment
@pytest.mark.parametrize(
    "dotted, value",
    [
        ("data.task_mix", {"temporal": 0.5, "spatial": 0.4}),
        ("data.task_mix", {"temporal": 0.5, "captioning": 0.5}),
        ("data.task_mix", {"temporal": 1.5, "spatial": -0.5}),
        ("training.steps", 0),
        ("lora.rank", 9),
        ("lora.n_heads", 0),
        ("loss_weights.dice", -1.0),
    ],
)
def test_preprocessing_checks(request, dotted, value):
    config = make_tiny_experiment_config(
        request.config.result_folder_path, **{dotted.replace(".", "__"): value}
    )
    with pytest.raises(ConfigurationError):
        ExperimentHub().read_data(config, generate=False)


@pytest.mark.experiment
def test_save_path_must_be_a_folder(request):
    file_path = request.config.data_folder_path / "not_a_folder"
    file_path.write_text("")
    config = make_tiny_experiment_config(file_path)
    with pytest.raises(ConfigurationError, match="is a file"):
        ExperimentHub().read_data(config, generate=False)


@pytest.mark.experiment
def test_gradient_check_passes():
    """
    Every trainable parameter of a tiny model on 20 seeds, with text and mask
    losses (segmentation) and text loss only (spatial)
    """
    start = time.perf_counter()
    for family in ("segmentation", "spatial"):
        records = check_gradients_over_seeds(range(20), family=family)
        assert sorted(set(r["seed"] for r in records)) == list(range(20))
        failed = [r for r in records if not r["passed"]]
        assert not failed, failed
        assert max(r["max_rel_error"] for r in records) <= 1e-4
    assert time.perf_counter() - start < 60.0

    report = check_gradients(seed=0)
    names = [c.name for c in report.checks]
    for part in ("compressor", "mask_decoder", ".A", ".B.2", ".W_r"):
        assert any(part in name for name in names), part


@pytest.mark.experiment
def test_command_line(request, capsys):
    data_folder = request.config.data_folder_path
    result_folder = request.config.result_folder_path
    config_file = data_folder / "tiny.json"
    save_json(
        configuration_values(
            make_tiny_experiment_config(result_folder, training__steps=2)
        ),
        config_file,
    )

    assert main(["template", "--list"]) == 0
    assert '"prompt_templates"' in capsys.readouterr().out

    suite = data_folder / "suite.h5"
    gen = ["gen", "--config", str(config_file), "--count", "2", "--out", str(suite)]
    assert main(gen) == 0
    assert json.loads(capsys.readouterr().out)["samples"] == 8

    run_folder = result_folder / "cli_run"
    assert main(
        ["train", "--config", str(config_file), "--output-dir", str(run_folder)]
    ) == 0
    capsys.readouterr()
    checkpoint = str(run_folder / "checkpoint.h5")

    assert main(["eval", "--checkpoint", checkpoint, "--suite", str(suite)]) == 0
    evaluated = json.loads(capsys.readouterr().out)
    assert set(evaluated["counts"].values()) == {2}

    drop_table = result_folder / "drop.csv"
    drop = ["drop", "--checkpoint", checkpoint, "--suite", str(suite)]
    assert main(drop + ["--out", str(drop_table)]) == 0
    assert set(pd.read_csv(drop_table)["dropped_head"].astype(str)) == {
        "none",
        "0",
        "1",
        "2",
    }
    capsys.readouterr()

    analysis_folder = result_folder / "analysis"
    traces = str(run_folder / "traces.jsonl")
    assert main(
        ["analyze", "--traces", traces, traces, "--out-dir", str(analysis_folder)]
    ) == 0
    assert (analysis_folder / "router_stats.json").exists()
    assert (analysis_folder / "router_scatter.svg").exists()
    capsys.readouterr()

    missing = str(data_folder / "missing.h5")
    assert main(["eval", "--checkpoint", missing, "--suite", str(suite)]) == 1
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert set(error) == {"error", "message"}


@pytest.mark.experiment
def test_annotate_command(request, capsys):
    folder = request.config.data_folder_path
    records = folder / "records.jsonl"
    with open(records, "w") as f:
        for i in range(3):
            record = {
                "id": f"q{i}",
                "task_kind": "avqa",
                "media_ref": f"q{i}.mp4",
                "original_label": "the violin",
                "slots": {"question": "Which instrument starts?"},
            }
            f.write(json.dumps(record) + "\n")
    out = folder / "accepted.jsonl"
    assert main(
        ["annotate", "--input", str(records), "--template", "avqa", "--out", str(out)]
    ) == 0
    assert json.loads(capsys.readouterr().out) == {"accepted": 3, "rejected": 0}
    assert len(out.read_text().splitlines()) == 3


@pytest.mark.experiment
@pytest.mark.slow
def test_ablation(request):
    config = make_tiny_experiment_config(
        request.config.result_folder_path,
        training__steps=2,
        analysis__head_drop=0,
        reporting__write_checkpoint=0,
    )
    table = run_ablation(config, variants=["ia_lora"])
    assert list(table.columns) == ["variant", "setting", "family", "value"]
    assert sorted(table["setting"].unique()) == ["ia_lora", "single_head"]
    assert len(table) == 2 * 4
    folder = request.config.result_folder_path / "tiny_ablation"
    assert (folder / "ablation.csv").exists()
    assert (folder / "single_head" / "report.json").exists()

    with pytest.raises(ConfigurationError):
        run_ablation(config, variants=["captioning"])


@pytest.mark.experiment
@pytest.mark.slow
def test_router_clustering_and_head_drop_on_default_runs(request):
    """
    Three seeds of the default configuration (3 heads, rank 8, 4 families,
    2000 samples, 1500 steps)

    The following is checked:
    - route profiles of one family are more alike than those of different
      families, by at least 0.1 in mean cosine similarity
    - for every family and at least two seeds, dropping the family's
      max-weight head hurts at least as much as dropping its min-weight head
    - no-drop is never worse than the worst single drop
    - the three runs finish within 15 minutes
    """
    start = time.perf_counter()
    separations, summaries = [], []
    for seed in range(3):
        config = load_configuration()
        set_config_value(config, "experiment.seed", seed)
        set_config_value(
            config, "experiment.save_path", str(request.config.result_folder_path)
        )
        set_config_value(config, "reporting.write_checkpoint", 0)
        hub = _run(config)
        report = hub.report

        separations.append(
            report.router["intra_similarity"] - report.router["inter_similarity"]
        )
        wide = primary_drop_table(report.head_drop)
        assert sorted(wide.index) == ["0", "1", "2", "none"]
        summaries.append(
            head_drop_summary(
                report.head_drop, hub.router_analysis.family_profiles
            ).set_index("family")
        )
    assert time.perf_counter() - start < 15 * 60

    assert np.mean(separations) >= 0.1, separations
    for family in summaries[0].index:
        max_hurts_more = [s.loc[family, "max_hurts_more"] for s in summaries]
        assert sum(max_hurts_more) >= 2, (family, max_hurts_more)
        assert all(s.loc[family, "no_drop_not_worst"] for s in summaries), family
