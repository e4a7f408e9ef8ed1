"""Command-line front door: validate, run, score, report.

Exit codes: 0 success, 2 for dataset/config validation failures, 1 for
runtime failures. MECD_NUM_THREADS caps the BLAS/OpenMP thread pools (set
before numpy loads, which is why the heavy imports happen inside main).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2


def _apply_thread_env() -> None:
    threads = os.environ.get("MECD_NUM_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mecd",
        description="Continual anomaly detection over patch-embedding memory banks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a MECD dataset and summarize it")
    p_validate.add_argument("dataset", type=Path)

    p_run = sub.add_parser("run", help="run the sequential protocol and write artifacts")
    p_run.add_argument("dataset", type=Path)
    p_run.add_argument("--config", type=Path, default=None, help="INI config file")
    p_run.add_argument("--out", type=Path, required=True, help="output directory")
    p_run.add_argument("--experts", type=int, default=None, help="number of experts")
    p_run.add_argument(
        "--sweep",
        default=None,
        metavar="A..B",
        help="also sweep expert counts A through B inclusive",
    )
    p_run.add_argument(
        "--retention", choices=("replay_shrink", "accumulate"), default=None
    )
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--theta", type=float, default=None, help="similarity threshold")
    p_run.add_argument("--nn-method", choices=("exact", "gram"), default=None)
    p_run.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    p_score = sub.add_parser("score", help="score one class against saved expert state")
    p_score.add_argument("--state", type=Path, required=True, help="expert state directory")
    p_score.add_argument("--dataset", type=Path, required=True)
    p_score.add_argument("--class", dest="class_name", required=True)
    p_score.add_argument("--split", choices=("test", "train"), default="test")
    p_score.add_argument("--out", type=Path, default=None, help="score CSV (default stdout)")
    p_score.add_argument("--nn-method", choices=("exact", "gram"), default="exact")

    p_report = sub.add_parser("report", help="re-render figures from a run's CSVs")
    p_report.add_argument("run_dir", type=Path)
    p_report.add_argument("--out", type=Path, default=None, help="figure directory")

    return parser


def main(argv: list[str] | None = None) -> int:
    _apply_thread_env()
    args = build_parser().parse_args(argv)
    from .config import ConfigError
    from .dataio import DatasetFormatError

    try:
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "score":
            return _cmd_score(args)
        if args.command == "report":
            return _cmd_report(args)
        raise AssertionError(f"unhandled command {args.command}")
    except (DatasetFormatError, ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


def _cmd_validate(args) -> int:
    from .dataio import Label, read_dataset_file

    stream = read_dataset_file(args.dataset)
    print(f"dataset: {args.dataset}")
    print(f"dimension: {stream.dimension}")
    print(f"classes: {len(stream.classes)}")
    header = f"{'class':<20} {'train':>6} {'test':>6} {'normal':>7} {'anomalous':>10}"
    print(header)
    print("-" * len(header))
    for cls in stream.classes:
        normal = sum(1 for r in cls.test if r.label == Label.NORMAL)
        print(
            f"{cls.name:<20} {len(cls.train):>6} {len(cls.test):>6} "
            f"{normal:>7} {len(cls.test) - normal:>10}"
        )
    print("ok")
    return EXIT_OK


def _parse_sweep(spec: str) -> list[int]:
    lo, sep, hi = spec.partition("..")
    if not sep:
        raise ValueError(f"--sweep expects A..B, got {spec!r}")
    start, end = int(lo), int(hi)
    if start < 1 or end < start:
        raise ValueError(f"--sweep range {spec!r} is empty or starts below 1")
    return list(range(start, end + 1))


def _cmd_run(args) -> int:
    from dataclasses import replace

    from . import __version__
    from .config import engine_config_to_dict, load_engine_config
    from .dataio import read_dataset_file
    from .evaluate import expert_sweep, forgetting, run_sequence_with_experts
    from .memory import save_experts
    from . import reports

    config = load_engine_config(args.config)
    if args.experts is not None:
        config = config.with_num_experts(args.experts)
    if args.theta is not None:
        config = replace(config, router=replace(config.router, similarity_threshold=args.theta))
    if args.retention is not None:
        config = replace(config, memory=replace(config.memory, retention_mode=args.retention))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.nn_method is not None:
        config = replace(config, nn_method=args.nn_method)

    stream = read_dataset_file(args.dataset)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    manifest = {
        "engine_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "dataset": str(args.dataset),
        "config_file": str(args.config) if args.config else None,
        "output_dir": str(out),
        "argv": sys.argv[1:],
        "config": engine_config_to_dict(config),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    sweep_results = None
    if args.sweep:
        counts = _parse_sweep(args.sweep)
        sweep_results = expert_sweep(stream, config, counts)
        reports.write_sweep_csv(sweep_results, out / reports.SWEEP_CSV)
        reports.write_heatmap_csv(sweep_results, out / reports.HEATMAP_CSV)

    ledger, experts = run_sequence_with_experts(stream, config)
    report = forgetting(ledger)
    reports.write_ledger_csv(ledger, out / reports.LEDGER_CSV)
    reports.write_assignments_csv(ledger, out / reports.ASSIGNMENTS_CSV)
    reports.write_expert_evolution_csv(ledger, out / reports.EVOLUTION_CSV)
    reports.write_report_json(
        engine_config_to_dict(config), ledger, report, sweep_results, out / reports.REPORT_JSON
    )
    save_experts(experts, stream.dimension, out / "experts")

    if not args.no_figures:
        written = reports.render_run_figures(out)
        written += reports.render_sweep_figures(out)
        for path in written:
            print(f"figure: {path}")

    mean = ledger.mean_final_auroc()
    print(f"classes: {len(ledger.class_order)}")
    print(f"mean final AUROC: {'n/a' if mean is None else f'{mean:.4f}'}")
    print(
        "global forgetting: "
        f"{'n/a' if report.global_mean is None else f'{report.global_mean:.4f}'}"
    )
    print(f"artifacts in {out}")
    return EXIT_OK


def _cmd_score(args) -> int:
    import csv

    from .dataio import Label, read_dataset_file
    from .evaluate import auroc
    from .memory import assignment_table, load_experts
    from .scoring import score_class

    experts, _policy, dimension = load_experts(args.state)
    stream = read_dataset_file(args.dataset)
    if stream.dimension != dimension:
        print(
            f"error: dataset dimension {stream.dimension} != expert state "
            f"dimension {dimension}",
            file=sys.stderr,
        )
        return EXIT_INVALID

    table = assignment_table(experts)
    if args.class_name not in table:
        known = ", ".join(sorted(table)) or "(none)"
        print(
            f"error: class {args.class_name!r} not in assignment table; "
            f"known classes: {known}",
            file=sys.stderr,
        )
        return EXIT_INVALID

    cls = stream.get_class(args.class_name)
    records = cls.test if args.split == "test" else cls.train
    expert = experts[table[args.class_name]]
    results = score_class(records, args.class_name, expert, method=args.nn_method)

    sink = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(sink)
        writer.writerow(["image_id", "label", "expert_id", "score", "argmax_patch_index"])
        for rec, res in zip(records, results):
            writer.writerow(
                [rec.image_id, rec.label.name.lower(), res.expert_id, repr(res.score), res.argmax_patch_index]
            )
    finally:
        if args.out:
            sink.close()

    labels = [rec.label for rec in records]
    if any(l == Label.ANOMALOUS for l in labels) and any(l == Label.NORMAL for l in labels):
        value = auroc([r.score for r in results], labels)
        print(f"auroc: {value!r}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from . import reports

    written = reports.render_run_figures(args.run_dir, args.out)
    written += reports.render_sweep_figures(args.run_dir, args.out)
    if not written:
        print("error: no renderable CSVs found in run directory", file=sys.stderr)
        return EXIT_INVALID
    for path in written:
        print(f"figure: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
