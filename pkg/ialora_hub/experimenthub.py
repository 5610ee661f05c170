import copy
from dataclasses import dataclass, field, asdict
from pathlib import Path
import os
import time
import numpy as np
import pandas as pd

from .components.adapters import enable_tracing, collect_trace
from .components.language_model import TASK_FAMILIES
from .data_management import TaskDataConfig, generate_suite
from .data_preprocessing import (
    ConfigurationError,
    load_configuration,
    config_value,
    set_config_value,
    configuration_values,
)
from .evaluation import (
    evaluate,
    primary_metrics,
    analyze_router,
    head_drop_experiment,
    head_drop_summary,
    StatisticsUndefinedError,
)
from .model_construction import ModelConfig, UnifiedModel, run_training
from .objectives import LossWeights, EvalResult
from .result_management import (
    create_unique_folder_name,
    create_save_folder,
    write_checkpoint,
    read_checkpoint,
    load_checkpoint_into,
    write_json,
    write_table,
    write_traces,
    write_mask_pgm,
    write_scatter_svg,
)

import logging

log = logging.getLogger(__name__)

ABLATION_VARIANTS = {
    "erp": [
        ("with_reasoning", "data.with_reasoning", 1),
        ("no_reasoning", "data.with_reasoning", 0),
    ],
    "ia_lora": [
        ("ia_lora", "lora.n_heads", 3),
        ("single_head", "lora.n_heads", 1),
    ],
    "heads": [(f"heads_{n}", "lora.n_heads", n) for n in (3, 4, 5)],
}


@dataclass
class RunReport:
    """
    Outcome of one experiment run

    Everything but ``wall_clock`` is a deterministic function of the
    configuration and goes into report.json; the wall clock is written to
    timing.json.
    """

    config: dict = field(default_factory=dict)
    loss_curve: list = field(default_factory=list)
    initial_metrics: EvalResult = None
    metrics: EvalResult = None
    initial_router: dict = field(default_factory=dict)
    router: dict = field(default_factory=dict)
    head_drop: pd.DataFrame = None
    wall_clock: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "loss_curve": self.loss_curve,
            "initial_metrics": (
                self.initial_metrics.to_dict() if self.initial_metrics else None
            ),
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "initial_router": self.initial_router,
            "router": self.router,
            "head_drop": (
                self.head_drop.to_dict(orient="records")
                if self.head_drop is not None
                else []
            ),
        }


def run_seeds(seed: int) -> dict:
    """
    Independent seeds of the stages of a run
    """
    stages = ["train_data", "eval_data", "init", "batches"]
    children = np.random.SeedSequence(seed).spawn(len(stages))
    return {
        stage: int(child.generate_state(1)[0]) for stage, child in zip(stages, children)
    }


class ExperimentHub:
    """
    Class to generate data for, construct, train and analyse an IA-LoRA model.

    When constructing an instance, all attributes are initialized empty:

    - self.config: configuration (template form)
    - self.data_config, self.model_config, self.loss_weights: typed views of it
    - self.train_pools: family -> training samples
    - self.eval_suite: evaluation samples
    - self.model: the unified model
    - self.report: report of the last run
    - self.result_folder_path: folder results are written to
    - self.timing: duration of every phase in seconds
    """

    def __init__(self):
        """
        Constructor
        """
        self.config = None
        self.data_config = None
        self.model_config = None
        self.loss_weights = None
        self.seeds = {}
        self.train_pools = {}
        self.eval_suite = []
        self.model = None
        self.report = None
        self.traces = {}
        self.router_analysis = None
        self.result_folder_path = None
        self.timing = {}

    def read_data(self, config=None, generate: bool = True):
        """
        Reads the configuration and generates the training and evaluation samples

        :param config: path of a ConfigExperiment.json, a dict, or None for the
            defaults
        :param bool generate: generate the sample suites
        """
        log.info("--- Reading in data ---")
        start = time.time()
        self.config = load_configuration(config)
        self._perform_preprocessing_checks()

        self.data_config = TaskDataConfig(
            n_frames=self._value("data.n_frames"),
            grid_size=self._value("data.grid_size"),
            audio_bins=self._value("data.audio_bins"),
            with_reasoning=bool(self._value("data.with_reasoning")),
            n_categories=self._value("data.mask_categories"),
            audio_noise=self._value("data.audio_noise"),
        )
        self.model_config = ModelConfig(
            hidden_dim=self._value("model.hidden_dim"),
            n_blocks=self._value("model.n_blocks"),
            visual_queries=self._value("model.visual_queries"),
            audio_queries=self._value("model.audio_queries"),
            rank=self._value("lora.rank"),
            n_heads=self._value("lora.n_heads"),
            init_std=self._value("lora.init_std"),
            max_decode_len=self._value("model.max_decode_len"),
        )
        self.loss_weights = LossWeights.from_dict(
            configuration_values(self.config["loss_weights"])
        )
        self.seeds = run_seeds(self._value("experiment.seed"))

        if generate:
            mix = self._value("data.task_mix")
            n_train = self._value("data.train_samples")
            train_counts = {
                f: int(round(n_train * mix.get(f, 0.0))) for f in TASK_FAMILIES
            }
            eval_counts = {
                f: self._value("data.eval_samples") if mix.get(f, 0.0) > 0 else 0
                for f in TASK_FAMILIES
            }
            train_suite = generate_suite(
                self.seeds["train_data"], train_counts, self.data_config
            )
            self.train_pools = {}
            for sample in train_suite:
                self.train_pools.setdefault(sample.family, []).append(sample)
            self.eval_suite = generate_suite(
                self.seeds["eval_data"], eval_counts, self.data_config
            )
            log.info(
                f"Generated {len(train_suite)} training and {len(self.eval_suite)} "
                f"evaluation samples"
            )

        self.timing["read_data"] = time.time() - start
        log.info("--- Reading in data complete ---")

    def _value(self, dotted: str):
        return config_value(self.config, dotted)

    def _perform_preprocessing_checks(self):
        """
        Checks consistency of the configuration before generating data or
        constructing the model

        - task mix covers known families only and sums to 1
        - steps, batch size and sample counts are positive
        - the adapter rank fits the model width
        - loss weights are nonnegative
        - the save path can be created
        """
        mix = self._value("data.task_mix")
        unknown = sorted(set(mix) - set(TASK_FAMILIES))
        if unknown:
            raise ConfigurationError(
                f"Unknown task families in data.task_mix: {unknown}"
            )
        if any(v < 0 for v in mix.values()):
            raise ConfigurationError(f"data.task_mix holds negative shares: {mix}")
        if abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ConfigurationError(
                f"data.task_mix must sum to 1, got {sum(mix.values())}"
            )

        for dotted in (
            "training.steps",
            "training.batch_size",
            "training.log_every",
            "data.train_samples",
            "data.eval_samples",
        ):
            if self._value(dotted) < 1:
                raise ConfigurationError(
                    f"'{dotted}' must be at least 1, got {self._value(dotted)}"
                )

        hidden_dim = self._value("model.hidden_dim")
        rank = self._value("lora.rank")
        if not 1 <= rank <= hidden_dim:
            raise ConfigurationError(
                f"lora.rank must lie in [1, {hidden_dim}], got {rank}"
            )
        if self._value("lora.n_heads") < 1:
            raise ConfigurationError(
                f"lora.n_heads must be at least 1, got {self._value('lora.n_heads')}"
            )

        weights = configuration_values(self.config["loss_weights"])
        negative = sorted(k for k, v in weights.items() if v < 0)
        if negative:
            raise ConfigurationError(f"Loss weights {negative} are negative")

        save_path = Path(self._value("experiment.save_path"))
        if save_path.exists() and not save_path.is_dir():
            raise ConfigurationError(
                f"The folder you want to save your results to ('{save_path}') is a "
                f"file. Change the save_path in the configuration"
            )

    def construct_model(self):
        """
        Constructs the unified model from the configuration
        """
        log.info("--- Constructing Model ---")
        start = time.time()
        self.model = UnifiedModel(
            self.model_config, self.data_config, seed=self.seeds["init"]
        )
        n_trainable = sum(p.size for p in self.model.trainable_parameters())
        n_frozen = sum(p.size for p in self.model.frozen_parameters())
        log.info(
            f"Model has {n_trainable} trainable and {n_frozen} frozen parameter values"
        )
        self.timing["construct_model"] = time.time() - start
        log.info(f"Constructing model completed in {round(time.time() - start)}s")

    def load_model(self, checkpoint_path: Path | str):
        """
        Constructs a model from the configuration stored in a checkpoint and
        loads its parameters
        """
        metadata = read_checkpoint(checkpoint_path)["metadata"]
        self.model_config = ModelConfig(**metadata["model_config"])
        self.data_config = TaskDataConfig(**metadata["data_config"])
        self.model = UnifiedModel(self.model_config, self.data_config)
        load_checkpoint_into(self.model, checkpoint_path)
        log.info(f"Loaded model from {checkpoint_path}")

    def train(self) -> list:
        """
        Trains the adapters, compressors and mask decoder on mixed-family batches

        :return: loss curve
        :rtype: list
        """
        log.info("--- Training model ---")
        start = time.time()
        curve = run_training(
            self.model,
            self.train_pools,
            self._value("data.task_mix"),
            steps=self._value("training.steps"),
            batch_size=self._value("training.batch_size"),
            base_lr=self._value("training.base_lr"),
            warmup_ratio=self._value("training.warmup_ratio"),
            weight_decay=self._value("training.weight_decay"),
            seed=self.seeds["batches"],
            weights=self.loss_weights,
            log_every=self._value("training.log_every"),
        )
        self.timing["train"] = time.time() - start
        log.info(f"Training completed in {round(time.time() - start)}s")
        return curve

    def evaluate(self, suite: list = None) -> EvalResult:
        """
        Evaluates the model on the evaluation suite (or the given samples)
        """
        log.info("--- Evaluating model ---")
        start = time.time()
        result = evaluate(self.model, suite if suite is not None else self.eval_suite)
        for family, value in primary_metrics(result).items():
            log.info(f"{family}: {value:.4f}")
        self.timing["evaluate"] = self.timing.get("evaluate", 0.0) + time.time() - start
        return result

    def analyze_router(self, suite: list = None):
        """
        Traces the route scores of every family and computes their clustering
        statistics

        :return: traces and statistics (None if they are undefined)
        :rtype: tuple
        """
        log.info("--- Analysing router ---")
        start = time.time()
        suite = suite if suite is not None else self.eval_suite
        n_trace = self._value("analysis.trace_samples")
        aggregation = self._value("analysis.aggregation")
        grouped = {}
        for sample in suite:
            grouped.setdefault(sample.family, []).append(sample)

        enable_tracing(self.model, True)
        try:
            self.traces = {
                family: collect_trace(
                    self.model, samples[:n_trace], family, aggregation
                )
                for family, samples in grouped.items()
            }
        finally:
            enable_tracing(self.model, False)

        try:
            self.router_analysis = analyze_router(
                self.traces, bool(self._value("analysis.center_profiles"))
            )
        except StatisticsUndefinedError as error:
            log.warning(f"Router statistics skipped: {error}")
            self.router_analysis = None
        self.timing["analyze_router"] = (
            self.timing.get("analyze_router", 0.0) + time.time() - start
        )
        return self.traces, self.router_analysis

    def run_head_drop(self, suite: list = None) -> pd.DataFrame:
        """
        Evaluates the model with every single head dropped
        """
        log.info("--- Running head-drop experiment ---")
        start = time.time()
        table = head_drop_experiment(
            self.model, suite if suite is not None else self.eval_suite
        )
        self.timing["head_drop"] = time.time() - start
        return table

    def _router_section(self) -> dict:
        profiles = {
            family: [float(v) for v in trace.profile]
            for family, trace in sorted(self.traces.items())
        }
        section = {"profiles": profiles}
        if self.router_analysis is not None:
            section.update(self.router_analysis.to_dict())
        return section

    def run(self) -> RunReport:
        """
        Full run: constructs, trains, evaluates, analyses and writes the results

        The router is traced after the initial and after the final evaluation.
        With training.dry_run the model is only evaluated and traced at
        initialization.

        :return: report of the run
        :rtype: RunReport
        """
        start = time.time()
        if self.model is None:
            self.construct_model()
        report = RunReport(config=configuration_values(self.config))
        report.initial_metrics = self.evaluate()
        self.analyze_router()
        report.initial_router = self._router_section()

        if not self._value("training.dry_run"):
            report.loss_curve = self.train()
            report.metrics = self.evaluate()
            self.analyze_router()
            report.router = self._router_section()
            if self._value("analysis.head_drop"):
                report.head_drop = self.run_head_drop()

        self.timing["total"] = time.time() - start
        report.wall_clock = dict(self.timing)
        self.report = report
        self.write_results()
        return report

    def _create_result_folder(self) -> Path:
        output_dir = self._value("experiment.output_dir")
        if output_dir:
            folder = Path(output_dir)
        else:
            folder = create_unique_folder_name(
                Path(self._value("experiment.save_path")),
                self._value("experiment.case_name"),
            )
        create_save_folder(folder)
        return folder

    def write_results(self):
        """
        Writes report, timing, tables, traces, plots and the checkpoint of the
        last run to the result folder
        """
        log.info("--- Saving results ---")
        folder = self._create_result_folder()
        self.result_folder_path = folder
        report = self.report

        write_json(report.to_dict(), folder / "report.json")
        write_json(report.wall_clock, folder / "timing.json")
        write_json(report.config, folder / "config.json")

        final = report.metrics or report.initial_metrics
        write_table(final.to_frame(), folder / "metrics.csv")
        if report.loss_curve:
            write_table(pd.DataFrame(report.loss_curve), folder / "loss_curve.csv")
        if report.head_drop is not None:
            write_table(report.head_drop, folder / "head_drop.csv")
            if self.router_analysis is not None:
                write_table(
                    head_drop_summary(
                        report.head_drop, self.router_analysis.family_profiles
                    ),
                    folder / "head_drop_summary.csv",
                )
        if self.traces and self._value("reporting.write_traces"):
            write_traces(self.traces, folder / "traces.jsonl")
        if self.router_analysis is not None:
            write_table(self.router_analysis.scatter, folder / "router_scatter.csv")
            if self._value("reporting.write_scatter"):
                write_scatter_svg(
                    self.router_analysis.scatter, folder / "router_scatter.svg"
                )
        if self._value("reporting.write_checkpoint"):
            self.save_checkpoint(folder / "checkpoint.h5")
        n_masks = self._value("reporting.mask_examples")
        if n_masks > 0:
            self.write_mask_examples(folder / "masks", n_masks)
        log.info(f"Results written to {folder}")

    def save_checkpoint(self, file_path: Path | str) -> Path:
        return write_checkpoint(
            self.model,
            file_path,
            metadata={
                "model_config": asdict(self.model_config),
                "data_config": asdict(self.data_config),
                "seed": self._value("experiment.seed") if self.config else None,
            },
        )

    def write_mask_examples(self, folder: Path, count: int):
        """
        Writes the predicted masks of the first segmentation samples as PGM
        """
        create_save_folder(folder)
        samples = [s for s in self.eval_suite if s.family == "segmentation"][:count]
        for i, sample in enumerate(samples):
            mask = self.model.predict(sample).mask
            for channel in range(mask.shape[0]):
                write_mask_pgm(
                    mask[channel],
                    folder / f"mask_{i:03d}_c{channel}.pgm",
                    channel=channel,
                )


def train(config=None) -> RunReport:
    """
    Reads the configuration, generates the data and performs a full run

    :param config: path of a ConfigExperiment.json, a dict, or None
    :return: report of the run
    :rtype: RunReport
    """
    hub = ExperimentHub()
    hub.read_data(config)
    return hub.run()


def run_ablation(config=None, variants=("erp", "ia_lora", "heads")) -> pd.DataFrame:
    """
    Trains one run per setting of every ablation variant under the same seed

    - erp: targets with and without reasoning tokens
    - ia_lora: the configured heads against a single-head adapter
    - heads: 3, 4 and 5 heads

    :param config: base configuration
    :param variants: names of the variants to run
    :return: primary metric per variant, setting and family
    :rtype: pd.DataFrame
    """
    unknown = sorted(set(variants) - set(ABLATION_VARIANTS))
    if unknown:
        raise ConfigurationError(f"Unknown ablation variants {unknown}")
    base = load_configuration(config)
    output_dir = config_value(base, "experiment.output_dir")
    if output_dir:
        folder = Path(output_dir)
    else:
        folder = create_unique_folder_name(
            Path(config_value(base, "experiment.save_path")),
            config_value(base, "experiment.case_name") + "_ablation",
        )
    create_save_folder(folder)

    rows = []
    for variant in variants:
        for setting, dotted, value in ABLATION_VARIANTS[variant]:
            if variant == "ia_lora" and setting == "ia_lora":
                value = config_value(base, "lora.n_heads")
            log.info(f"--- Ablation {variant}: {setting} ---")
            run_config = copy.deepcopy(base)
            set_config_value(run_config, dotted, value)
            set_config_value(
                run_config, "experiment.output_dir", os.fspath(folder / setting)
            )
            report = train(configuration_values(run_config))
            final = report.metrics or report.initial_metrics
            for family, metric in primary_metrics(final).items():
                rows.append(
                    {
                        "variant": variant,
                        "setting": setting,
                        "family": family,
                        "value": float(metric),
                    }
                )
    table = pd.DataFrame(rows, columns=["variant", "setting", "family", "value"])
    write_table(table, folder / "ablation.csv")
    write_json({"rows": table.to_dict(orient="records")}, folder / "ablation.json")
    return table
