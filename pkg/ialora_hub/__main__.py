import argparse
import json
import sys
from pathlib import Path

from .components.language_model import TASK_FAMILIES
from .data_management import TaskDataConfig, generate_suite, save_suite, load_suite
from .data_preprocessing import (
    create_experiment_templates,
    load_configuration,
    set_config_value,
    configuration_values,
    show_available_templates,
    show_available_grammars,
)
from .dataset_tools import (
    OfflineStubClient,
    HttpAnnotationClient,
    annotate_batch,
    filter_batch,
    load_template,
    read_records,
    write_records,
    export_rejected,
)
from .diagnostics import check_gradients_over_seeds
from .evaluation import analyze_router, evaluate, head_drop_experiment
from .experimenthub import ExperimentHub, run_ablation, ABLATION_VARIANTS
from .result_management import (
    create_save_folder,
    read_traces,
    write_json,
    write_table,
    write_scatter_svg,
)


def _config_with_overrides(args) -> dict:
    config = load_configuration(args.config)
    if getattr(args, "seed", None) is not None:
        set_config_value(config, "experiment.seed", args.seed)
    if getattr(args, "output_dir", None):
        set_config_value(config, "experiment.output_dir", args.output_dir)
    if getattr(args, "steps", None) is not None:
        set_config_value(config, "training.steps", args.steps)
    return configuration_values(config)


def cmd_gen(args):
    config = load_configuration(args.config)
    data = configuration_values(config)["data"]
    data_config = TaskDataConfig(
        n_frames=data["n_frames"],
        grid_size=data["grid_size"],
        audio_bins=data["audio_bins"],
        with_reasoning=bool(data["with_reasoning"]),
        n_categories=data["mask_categories"],
        audio_noise=data["audio_noise"],
    )
    counts = {f: args.count for f in args.families}
    samples = generate_suite(args.seed, counts, data_config)
    save_suite(samples, args.out, data_config)
    return {"suite": str(args.out), "samples": len(samples)}


def cmd_train(args):
    hub = ExperimentHub()
    hub.read_data(_config_with_overrides(args))
    report = hub.run()
    final = report.metrics or report.initial_metrics
    return {"result_folder": str(hub.result_folder_path), **final.to_dict()}


def _model_and_suite(args):
    hub = ExperimentHub()
    hub.load_model(args.checkpoint)
    samples, _ = load_suite(args.suite)
    return hub, samples


def cmd_eval(args):
    hub, samples = _model_and_suite(args)
    result = evaluate(hub.model, samples)
    if args.out:
        write_table(result.to_frame(), args.out)
    return result.to_dict()


def cmd_analyze(args):
    traces = read_traces(args.traces, args.aggregation)
    analysis = analyze_router(traces, args.center)
    out = Path(args.out_dir)
    create_save_folder(out)
    write_json(analysis.to_dict(), out / "router_stats.json")
    write_table(analysis.scatter, out / "router_scatter.csv")
    write_scatter_svg(analysis.scatter, out / "router_scatter.svg")
    return analysis.to_dict()


def cmd_drop(args):
    hub, samples = _model_and_suite(args)
    table = head_drop_experiment(hub.model, samples)
    if args.out:
        write_table(table, args.out)
    return {"rows": table.to_dict(orient="records")}


def cmd_gradcheck(args):
    records = check_gradients_over_seeds(
        range(args.seeds), max_entries=args.max_entries, tol=args.tol
    )
    failed = [r for r in records if not r["passed"]]
    if failed:
        worst = max(failed, key=lambda r: r["max_rel_error"])
        raise RuntimeError(
            f"Gradient check failed for {len(failed)} parameter checks; worst "
            f"'{worst['name']}' (seed {worst['seed']}): {worst['diagnostic']}"
        )
    return {
        "checks": len(records),
        "max_rel_error": max(r["max_rel_error"] for r in records),
    }


def cmd_ablate(args):
    table = run_ablation(_config_with_overrides(args), args.variants)
    return {"rows": table.to_dict(orient="records")}


def cmd_annotate(args):
    if args.client == "http":
        client = HttpAnnotationClient.from_environment(
            rate_limit=args.rate_limit, timeout=args.timeout
        )
    else:
        client = OfflineStubClient(
            corruption_rate=args.corruption_rate, rate_limit=args.rate_limit
        )
    records = read_records(args.input)
    template = load_template(args.template)
    annotate_batch(records, template, client, max_workers=args.workers)
    accepted, rejected = filter_batch(records)
    write_records(accepted, args.out)
    if args.rejected:
        export_rejected(rejected, args.rejected)
    return {"accepted": len(accepted), "rejected": len(rejected)}


def cmd_template(args):
    if args.list:
        return {
            "prompt_templates": show_available_templates(),
            "label_grammars": show_available_grammars(),
        }
    return {"config": str(create_experiment_templates(args.path))}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ialora_hub",
        description="Desk-scale interaction-aware LoRA experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="Generate a task suite")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=50, help="Samples per family")
    p.add_argument(
        "--families", nargs="+", choices=TASK_FAMILIES, default=list(TASK_FAMILIES)
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="Train, evaluate and analyse a model")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on a suite")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--out", default=None, help="Metric CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="Router statistics of trace files")
    p.add_argument("--traces", nargs="+", required=True)
    p.add_argument("--aggregation", choices=["flat", "layer_mean"], default="flat")
    p.add_argument("--center", action="store_true")
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("drop", help="Head-drop experiment of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--out", default=None, help="Head-drop CSV")
    p.set_defaults(func=cmd_drop)

    p = sub.add_parser("gradcheck", help="Finite-difference gradient check")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--max-entries", dest="max_entries", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="Train the ablation variants")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.add_argument(
        "--variants",
        nargs="+",
        choices=sorted(ABLATION_VARIANTS),
        default=sorted(ABLATION_VARIANTS),
    )
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("annotate", help="Transform and filter annotation records")
    p.add_argument("--input", required=True, help="Records as json lines")
    p.add_argument("--template", required=True, help="Task kind or template path")
    p.add_argument("--client", choices=["stub", "http"], default="stub")
    p.add_argument(
        "--corruption-rate", dest="corruption_rate", type=float, default=0.0
    )
    p.add_argument("--rate-limit", dest="rate_limit", type=float, default=None)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", required=True, help="Accepted records")
    p.add_argument("--rejected", default=None, help="Rejected records")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("template", help="Write a configuration template")
    p.add_argument("--path", default=".")
    p.add_argument("--list", action="store_true")
    p.set_defaults(func=cmd_template)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except Exception as error:
        message = {"error": type(error).__name__, "message": str(error)}
        print(json.dumps(message), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
