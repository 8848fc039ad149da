"""Command line entry point: ``purchase-anomaly {generate,profile,detect,explain,report}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .ingest import IngestError, Schema, clean, load_transactions, profile, write_transactions
from .pipeline import PipelineError, explain_top, run_pipeline
from .synthgen import AnomalySpec, GenConfig, GenerationError, company1_like, generate, inject_anomalies

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

logger = logging.getLogger("purchase_anomaly")

_GEN_FLAGS = {
    "records": "n_records",
    "vendors": "n_vendors",
    "requesters": "n_requesters",
    "buyers": "n_buyers",
    "approvers": "n_approvers",
    "group_categories": "n_group_categories",
    "material_categories": "n_material_categories",
}


def _add_generator_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("generator")
    g.add_argument("--preset", choices=["default", "company1"], help="start from a preset vocabulary")
    for flag in _GEN_FLAGS:
        g.add_argument(f"--{flag.replace('_', '-')}", type=int, dest=f"gen_{flag}")
    g.add_argument("--rate-point", type=float, default=None, help="fraction of rows with inflated amounts")
    g.add_argument("--rate-contextual", type=float, default=None, help="fraction of rows with foreign vendors")
    g.add_argument("--multiplier", type=float, nargs=2, metavar=("LOW", "HIGH"), default=None)


def _generator_from_args(args: argparse.Namespace) -> tuple[GenConfig | None, AnomalySpec | None]:
    overrides = {
        field: getattr(args, f"gen_{flag}") for flag, field in _GEN_FLAGS.items() if getattr(args, f"gen_{flag}") is not None
    }
    if args.preset is None and not overrides:
        gen = None
    else:
        gen = company1_like() if args.preset == "company1" else GenConfig()
        gen = dataclasses.replace(gen, **overrides)
    spec_args = {}
    if args.rate_point is not None:
        spec_args["rate_point"] = args.rate_point
    if args.rate_contextual is not None:
        spec_args["rate_contextual"] = args.rate_contextual
    if args.multiplier is not None:
        spec_args["multiplier_range"] = tuple(args.multiplier)
    return gen, (AnomalySpec(**spec_args) if spec_args else None)


# RunConfig fields exposed as --flags, with their argument types
_RUN_FLAGS = {
    "k_min": int,
    "k_max": int,
    "silhouette_fraction": float,
    "z_threshold": float,
    "dbscan_eps": float,
    "dbscan_min_neighbors": int,
    "iforest_n_trees": int,
    "iforest_sample_size": int,
    "iforest_quantile": float,
    "iforest_cap": int,
    "cluster_min_fraction": float,
    "review_order": str,
    "explain_top": int,
    "explain_permutations": int,
    "background_fraction": float,
    "background_cap": int,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="purchase-anomaly", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic purchase dataset (+ ground truth)")
    _add_generator_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.add_argument("--ground-truth", help="ground-truth CSV path (when anomalies are injected)")

    p = sub.add_parser("profile", help="vocabulary and volume profile of a transaction CSV")
    p.add_argument("input")
    p.add_argument("--extra-columns", nargs="*", help="strict schema: mandatory columns plus exactly these")
    p.add_argument("--json", dest="json_out")
    p.add_argument("--csv", dest="csv_out")

    p = sub.add_parser("detect", help="run the full detection pipeline")
    p.add_argument("--config", help="RunConfig JSON; flags override its values")
    p.add_argument("--input", dest="input_path")
    p.add_argument("--extra-columns", nargs="*")
    _add_generator_args(p)
    p.add_argument("--strategies", nargs="+")
    p.add_argument("--segregate-univariate", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output_dir")
    for name, typ in _RUN_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, dest=name)

    p = sub.add_parser("explain", help="re-attribute the top rows of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--out-subdir", default="explain")

    p = sub.add_parser("report", help="print the summary of a finished run")
    p.add_argument("run_dir")
    return parser


def _detect_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> RunConfig:
    base = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    gen, spec = _generator_from_args(args)
    if gen is not None:
        base["generator"] = dataclasses.asdict(gen)
        base.pop("input_path", None)
    if spec is not None:
        base["anomalies"] = dataclasses.asdict(spec)
    if args.input_path is not None:
        base["input_path"] = args.input_path
        base.pop("generator", None)
    if base.get("input_path") is None and base.get("generator") is None:
        parser.error("detect needs --input, generator flags (--preset/--records/...) or a --config naming one")
    for name in ("output_dir", "seed", "segregate_univariate", *_RUN_FLAGS):
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    if args.strategies:
        base["strategies"] = args.strategies
    if args.extra_columns is not None:
        base["extra_columns"] = args.extra_columns
    return RunConfig.from_dict(base)


def _cmd_generate(args: argparse.Namespace) -> int:
    gen, spec = _generator_from_args(args)
    gen = dataclasses.replace(gen or GenConfig(), seed=args.seed)
    d = generate(gen)
    if spec is not None:
        d, truth = inject_anomalies(d, spec, args.seed + 1)
        if args.ground_truth:
            truth.write_csv(args.ground_truth)
    write_transactions(d, args.out)
    print(f"wrote {len(d)} records to {args.out}")
    return EXIT_OK


def _cmd_profile(args: argparse.Namespace) -> int:
    schema = None if args.extra_columns is None else Schema.with_extra(args.extra_columns)
    d, removed = clean(load_transactions(args.input, schema))
    report = profile(d)
    if args.json_out:
        report.write_json(args.json_out)
    if args.csv_out:
        report.write_csv(args.csv_out)
    width = max(len(label) for label, _ in report.table_rows())
    print(f"{'#Rows removed (missing values)':<{width}}  {removed}")
    for label, value in report.table_rows():
        print(f"{label:<{width}}  {value}")
    return EXIT_OK


def _cmd_detect(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    try:
        cfg = _detect_config(args, parser)
    except (ValueError, TypeError) as exc:
        parser.error(str(exc))
    report = run_pipeline(cfg)
    sel = report.selection
    print(f"selected {sel['strategy']} k={sel['k']} silhouette={sel['silhouette']:.3f} ({sel['label']})")
    print(f"review rows: {report.counts['review_rows']}; outputs in {report.output_dir}")
    return EXIT_OK


def _cmd_explain(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_json(Path(args.run_dir) / "run_config.json")
    vectors = explain_top(
        args.run_dir, args.top, args.permutations, cfg.seed, cfg.background_fraction, cfg.background_cap,
        subdir=args.out_subdir,
    )
    print(f"wrote {len(vectors)} attribution files to {Path(args.run_dir) / args.out_subdir}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    run = Path(args.run_dir)
    data = json.loads((run / "run_report.json").read_text(encoding="utf-8"))
    sel = data["selection"]
    print(f"model: {sel['strategy']} k={sel['k']} silhouette={sel['silhouette']:.3f} ({sel['label']})")
    print("univariate outliers per encoding:")
    for strategy, c in data["counts"]["univariate"].items():
        print(f"  {strategy:<7} outliers={c['univariate_outliers']:>6} normal={c['normal']:>6} total={c['total']:>6}")
    print("priority groups (kmeans, silhouette, iforest, univariate):")
    for g in data["counts"]["priority_groups"]:
        flags = " ".join("Yes" if f else "No " for f in g["flags"])
        print(f"  {g['priority']}  {flags}  total={g['total']}")
    print("stage timings (s): " + ", ".join(f"{k}={v}" for k, v in data["timings"].items()))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "profile":
            return _cmd_profile(args)
        if args.command == "detect":
            return _cmd_detect(args, parser)
        if args.command == "explain":
            return _cmd_explain(args)
        return _cmd_report(args)
    except (IngestError, GenerationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        data_error = isinstance(exc.cause, (IngestError, GenerationError, ValueError))
        return EXIT_DATA if data_error else EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
