"""Command-line front end.

Exit codes: 0 success, 1 other errors, 2 invalid configuration, 3 dataset
load failure, 4 every fold failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from . import __version__
from .data import DatasetError, load_dataset
from .models import MODEL_KINDS
from .pipeline import (ConfigError, CvReport, PipelineConfig, compare_models, cross_validate,
                       stability_analysis)
from .reporting import (fold_groups, km_export, run_manifest, write_comparison, write_km,
                        write_manifest, write_stability)
from .synthetic import default_spec, generate_synthetic

WORKERS_ENV = "OMICSURV_WORKERS"

EXIT_ERROR, EXIT_CONFIG, EXIT_DATASET, EXIT_ALL_FAILED = 1, 2, 3, 4

# flag -> (config key, type)
CONFIG_FLAGS = {
    "--k-per-layer": ("k_per_layer", int),
    "--fingerprints": ("n_fingerprints", int),
    "--hidden": ("hidden", int),
    "--epochs": ("epochs", int),
    "--learning-rate": ("learning_rate", float),
    "--l2-lambda": ("l2_lambda", float),
    "--dropout": ("dropout", float),
    "--noise-std": ("noise_std", float),
    "--t0": ("t0", float),
    "--tb": ("tb", float),
    "--select-alpha": ("select_alpha", float),
    "--cox-fallback-penalty": ("cox_fallback_penalty", float),
    "--folds": ("folds", int),
    "--repeats": ("repeats", int),
    "--seed": ("master_seed", int),
    "--dtype": ("dtype", str),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with pipeline settings")
    for flag, (key, typ) in CONFIG_FLAGS.items():
        p.add_argument(flag, dest=key, type=typ, default=None)
    p.add_argument("--selection-all-samples", dest="selection_on_train_only",
                   action="store_false", default=None,
                   help="variance selection on all rows instead of training rows")


def _config(args) -> PipelineConfig:
    base = PipelineConfig.load(args.config).to_dict() if args.config else {}
    for key, _ in CONFIG_FLAGS.values():
        value = getattr(args, key)
        if value is not None:
            base[key] = value
    if args.selection_on_train_only is not None:
        base["selection_on_train_only"] = args.selection_on_train_only
    return PipelineConfig.from_dict(base)


def _load(path: str):
    try:
        return load_dataset(path)
    except (DatasetError, OSError) as exc:
        raise CliError(f"cannot load dataset {path}: {exc}", EXIT_DATASET) from exc


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{WORKERS_ENV} must be an integer, got {raw!r}", EXIT_CONFIG)
    return max(1, n)


def cmd_run(args) -> int:
    config = _config(args)
    dataset = _load(args.dataset)
    try:
        report = cross_validate(dataset, args.model, config, workers=_workers())
    except RuntimeError as exc:
        raise CliError(str(exc), EXIT_ALL_FAILED) from exc
    os.makedirs(args.out, exist_ok=True)
    report.save(args.out)
    write_manifest(run_manifest(config, args.model, args.dataset, dataset), args.out)
    if args.figures:
        try:
            labels, groups = fold_groups(report, dataset, repeat=0)
            write_km(km_export(labels, groups), os.path.join(args.out, "km"),
                     f"{dataset.name} {args.model}")
        except (ValueError, RuntimeError) as exc:
            logging.getLogger(__name__).warning("skipping KM figure: %s", exc)
    print(f"{args.model}: mean C-index {report.mean_c_index:.4f} "
          f"({len(report.successes)}/{len(report.folds)} folds)")
    return 0


def cmd_compare(args) -> int:
    reports = [CvReport.load(p) for p in args.reports]
    try:
        table = compare_models(reports)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    sys.stdout.write(table.to_text())
    if args.out:
        write_comparison(table, reports, args.out)
    return 0


def cmd_km(args) -> int:
    report = CvReport.load(args.report)
    dataset = _load(args.dataset)
    try:
        labels, groups = fold_groups(report, dataset, repeat=args.repeat)
        export = km_export(labels, groups)
    except ValueError as exc:
        raise CliError(f"missing cluster labels: {exc}") from exc
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_km(export, args.out, args.title or f"{report.dataset} {report.model}",
             png=args.figures)
    print(f"logrank p = {export.logrank_p:.4g}")
    return 0


def cmd_stability(args) -> int:
    if args.model not in MODEL_KINDS:
        raise CliError(f"unsupported model kind {args.model!r}")
    config = _config(args)
    dataset = _load(args.dataset)
    result = stability_analysis(dataset, args.model, args.runs, config)
    write_stability(result, args.out, png=args.figures)
    for name, count in result.layer_counts.items():
        print(f"{name}: {count}")
    return 0


def cmd_synth(args) -> int:
    weights = (0.0,) * 5 if args.null else (1.0, -1.0, 1.0, -1.0, 1.0)
    spec = default_spec(args.seed, args.samples, args.censoring_rate, weights)
    dataset = generate_synthetic(spec, args.out, name=os.path.basename(os.path.abspath(args.out)))
    print(f"wrote {dataset.n_samples} samples, {dataset.survival.n_events} events to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omicsurv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="cross-validate one model on one dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="rank models and run pairwise t-tests")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("km", help="Kaplan-Meier curves of the test clusters")
    p.add_argument("--report", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output prefix for .csv/.svg/.png")
    p.add_argument("--repeat", type=int, default=0)
    p.add_argument("--title")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_km)

    p = sub.add_parser("stability", help="top-feature frequencies over repeated fits")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--runs", type=int, default=32)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    _add_config_flags(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("synth", help="write a planted-signal synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=300)
    p.add_argument("--censoring-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--null", action="store_true", help="zero all planted weights")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "runs", 1) < 1:
        print("error: runs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
