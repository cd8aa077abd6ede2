"""Command-line surface: run experiments, compare runs, export plot data.

Exit codes for ``run``: 0 success, 1 configuration error, 2 runtime error.
Error messages go to standard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time

from . import figures, runio
from .config import ConfigError, RunConfig, load_config
from .experiment import run_from_config
from .metrics import rounds_to_target

EXPORT_KINDS = (
    "forgetting-ecdf",
    "per-class-heatmap",
    "local-global-loss",
    "round-decomposition",
)


def cmd_run(config_path: str, out_dir: str, seed: int | None = None) -> int:
    try:
        config = load_config(config_path)
        if seed is not None:
            if seed < 0:
                raise ConfigError(f"seed: must be non-negative, got {seed}")
            config = RunConfig(
                dataclasses.replace(config.federation, seed=seed), config.data
            )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        start = time.perf_counter()
        result, env = run_from_config(config)
        duration = time.perf_counter() - start
        runio.write_run_dir(out_dir, config, result, env.test_set, duration)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    final = result.accuracy_trace[-1] if result.records else result.initial_accuracy
    print(
        f"{config.federation.algorithm}: {config.federation.rounds} rounds in "
        f"{duration:.1f}s, final accuracy {final:.4f}, outputs in {out_dir}"
    )
    return 0


def cmd_compare(
    run_dirs: list[str], target: float, fractions: list[float], out_csv: str
) -> int:
    try:
        runs = [(d, runio.read_run_dir(d)) for d in run_dirs]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    reference = runs[0][1].manifest
    for run_dir, run in runs[1:]:
        if run.manifest["num_classes"] != reference["num_classes"]:
            print(f"error: {run_dir}: class count differs from {runs[0][0]}", file=sys.stderr)
            return 1
        if run.manifest["test_set_hash"] != reference["test_set_hash"]:
            print(f"error: {run_dir}: test set differs from {runs[0][0]}", file=sys.stderr)
            return 1

    labels = [f"rounds_to_{format(f, 'g')}" for f in fractions]
    rows = []
    for run_dir, run in runs:
        trace = run.accuracy_trace
        cells = []
        for fraction in fractions:
            reached = rounds_to_target(trace, target, fraction) if trace else None
            cells.append("-" if reached is None else str(reached))
        final = trace[-1] if trace else float("nan")
        rows.append((os.path.basename(os.path.normpath(run_dir)) or run_dir, final, cells))

    name_width = max(len("run"), *(len(r[0]) for r in rows))
    header = ["run".ljust(name_width), "final_acc"] + labels
    print("  ".join(header))
    for name, final, cells in rows:
        padded = [c.rjust(len(label)) for c, label in zip(cells, labels)]
        print("  ".join([name.ljust(name_width), f"{final:9.4f}"] + padded))

    with open(out_csv, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(["run", "final_accuracy"] + labels) + "\n")
        for name, final, cells in rows:
            handle.write(",".join([name, runio.format_float(final)] + cells) + "\n")
    return 0


def _export_rows(kind: str, run: runio.RunData) -> tuple[list[str], list[list]]:
    if kind == "forgetting-ecdf":
        values = sorted(
            record["round_forgetting"]
            for record in run.records
            if record["round_forgetting"] is not None
        )
        n = len(values)
        return ["round_forgetting", "cumulative_fraction"], [
            [v, (i + 1) / n] for i, v in enumerate(values)
        ]
    if kind == "per-class-heatmap":
        num_classes = run.accuracy_matrix.shape[1]
        header = ["round"] + [f"class_{c}" for c in range(num_classes)]
        return header, [[t, *row] for t, row in enumerate(run.accuracy_matrix)]
    if kind == "local-global-loss":
        return ["round", "mean_local_test_loss", "global_test_loss"], [
            [r["round"], r["mean_local_test_loss"], r["global_test_loss"]]
            for r in run.records
        ]
    if kind == "round-decomposition":
        return [
            "round",
            "local_forgetting",
            "aggregation_forgetting",
            "round_forgetting",
        ], [
            [
                r["round"],
                r["local_forgetting"],
                r["aggregation_forgetting"],
                r["round_forgetting"],
            ]
            for r in run.records
        ]
    raise ValueError(f"unknown export kind {kind!r}")


def _render_figure(kind: str, rows: list[list], run: runio.RunData, path: str) -> None:
    if kind == "forgetting-ecdf":
        figures.render_forgetting_ecdf([r[0] for r in rows], [r[1] for r in rows], path)
    elif kind == "per-class-heatmap":
        figures.render_heatmap(run.accuracy_matrix, path)
    elif kind == "local-global-loss":
        figures.render_local_global_loss(
            [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], path
        )
    elif kind == "round-decomposition":
        figures.render_decomposition(
            [r[0] for r in rows],
            [r[1] for r in rows],
            [r[2] for r in rows],
            [r[3] for r in rows],
            path,
        )


def cmd_export(run_dir: str, kind: str, out_path: str, render: bool = True) -> int:
    try:
        run = runio.read_run_dir(run_dir)
        header, rows = _export_rows(kind, run)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    with open(out_path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for value in row:
                if value is None:
                    cells.append("")
                elif isinstance(value, int):
                    cells.append(str(value))
                else:
                    cells.append(runio.format_float(value))
            handle.write(",".join(cells) + "\n")
    if render:
        figure_path = os.path.splitext(out_path)[0] + ".png"
        _render_figure(kind, rows, run, figure_path)
        print(f"wrote {out_path} and {figure_path}")
    else:
        print(f"wrote {out_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim", description="Deterministic federated-learning simulator."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, help="path to the JSON config")
    run.add_argument("--out", required=True, help="output directory for the run artifacts")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")

    compare = sub.add_parser("compare", help="tabulate rounds-to-target across runs")
    compare.add_argument("--runs", nargs="+", required=True, help="run directories")
    compare.add_argument("--target", type=float, required=True, help="target accuracy")
    compare.add_argument(
        "--fractions",
        default="0.5,0.75,0.95",
        help="comma-separated fractions of the target (default 0.5,0.75,0.95)",
    )
    compare.add_argument("--out", default="table.csv", help="CSV output path")

    export = sub.add_parser("export", help="export plot-ready CSV data from a run")
    export.add_argument("--run", required=True, help="run directory")
    export.add_argument("--kind", required=True, choices=EXPORT_KINDS)
    export.add_argument("--out", required=True, help="CSV output path")
    export.add_argument(
        "--no-figure",
        action="store_true",
        help="skip rendering the PNG next to the CSV",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed)
    if args.command == "compare":
        try:
            fractions = [float(part) for part in args.fractions.split(",") if part.strip()]
        except ValueError:
            print(f"error: fractions: cannot parse {args.fractions!r}", file=sys.stderr)
            return 1
        if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
            print("error: fractions must lie in (0, 1]", file=sys.stderr)
            return 1
        return cmd_compare(args.runs, args.target, fractions, args.out)
    if args.command == "export":
        return cmd_export(args.run, args.kind, args.out, render=not args.no_figure)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
