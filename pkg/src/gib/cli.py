"""Command line entry point: ``gib run | verify-bounds | gen-data | plot``.

The only environment variable consulted is ``GIB_THREADS``, which caps the
BLAS/numba thread pools (it must be set before numpy is imported, so it is
applied in the package ``__init__``).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import config as config_mod
from .config import ConfigError
from .datasets import save_dataset
from .divergence import verify_bounds

PLOT_CURVES = (
    # (x column, y column, group column or None, file suffix)
    ("epsilon", "accuracy", "attack", "accuracy"),
    ("lambda", "active_features", None, "active"),
)


class PlotDataError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _read_table(path: str) -> tuple[list[str], list[tuple[int, dict]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise PlotDataError("empty file, no header row")
        rows = []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(header):
                raise PlotDataError(f"expected {len(header)} fields, got {len(rec)}", reader.line_num)
            rows.append((reader.line_num, dict(zip(header, rec))))
    if not rows:
        raise PlotDataError("no data rows")
    return header, rows


def emit_plot_data(csv_path: str, out_dir: str) -> list[str]:
    """Write two-column ``x y`` files, one per curve, sorted by ``x``.

    Attack summaries give one ``(epsilon, accuracy)`` file per attack; sweep
    summaries give one ``(lambda, active_features)`` file. Several seeds are
    written as separate rows at the same ``x``.
    """
    header, rows = _read_table(csv_path)
    stem = os.path.splitext(os.path.basename(csv_path))[0]
    for xcol, ycol, group, suffix in PLOT_CURVES:
        if xcol in header and ycol in header:
            break
    else:
        raise PlotDataError(f"no plottable column pair in {csv_path}; header is {header}")
    curves: dict[str, list[tuple[float, float]]] = {}
    for lineno, row in rows:
        try:
            x, y = float(row[xcol]), float(row[ycol])
        except ValueError:
            raise PlotDataError(f"non-numeric {xcol}/{ycol}: {row[xcol]!r}, {row[ycol]!r}", lineno) from None
        key = row[group] if group else ""
        curves.setdefault(key, []).append((x, y))
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for key in sorted(curves):
        name = f"{stem}_{key}_{suffix}.dat" if key else f"{stem}_{suffix}.dat"
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {xcol} {ycol}\n")
            for x, y in sorted(curves[key]):
                fh.write(f"{x!r} {y!r}\n")
        written.append(path)
    return written


def _load_config(args) -> config_mod.ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.config is None:
        raise ConfigError("--config is required")
    if not os.path.exists(args.config):
        raise ConfigError(f"config file not found: {args.config}")
    return config_mod.load(args.config, overrides)


def cmd_run(args) -> int:
    from .experiments import run_experiment

    cfg = _load_config(args)
    out = args.out or cfg["output"]
    path, rows = run_experiment(cfg, out)
    print(f"{cfg.experiment}: {len(rows)} summary rows -> {path}")
    if cfg.experiment == "verify-bounds":
        print(open(os.path.join(out, f"seed_{cfg['seeds'][0]}", "bounds.txt"), encoding="utf-8").read(), end="")
    return 0


def cmd_verify_bounds(args) -> int:
    seed = 0 if args.seed is None else args.seed
    report = verify_bounds(args.trials, seed)
    text = report.table() + "\n"
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bounds.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0 if report.passed else 1


def cmd_gen_data(args) -> int:
    from .experiments import colored_stream, plain_stream, sem_stream

    cfg = _load_config(args)
    out = args.out or cfg["output"]
    os.makedirs(out, exist_ok=True)
    seed = int(cfg["seeds"][0])
    if cfg.experiment == "colored":
        envs, test = colored_stream(cfg, seed)
    elif cfg.experiment == "sem":
        envs, test = sem_stream(cfg, seed)[1], None
    elif cfg.experiment in ("adversarial", "ood"):
        envs, test = plain_stream(cfg, seed)
    else:
        raise ConfigError(f"gen-data has nothing to generate for experiment {cfg.experiment!r}")
    for e in envs:
        save_dataset(e, os.path.join(out, f"env_{e.env_index}.gibd"))
    if test is not None:
        save_dataset(test, os.path.join(out, "test.gibd"))
    with open(os.path.join(out, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.snapshot())
    print(f"wrote {len(envs) + (test is not None)} datasets to {out}")
    return 0


def cmd_plot(args) -> int:
    for path in emit_plot_data(args.csv, args.out or os.path.dirname(os.path.abspath(args.csv))):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gib", description="Gated information bottleneck experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", metavar="PATH", help="key = value experiment config")
        p.add_argument("--seed", type=int, help="override the configured seeds with one seed")
        p.add_argument("--out", metavar="DIR", help="output directory")

    p = sub.add_parser("run", help="run one experiment")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify-bounds", help="numerically check the information bounds")
    common(p, config=False)
    p.add_argument("--trials", type=int, default=1000)
    p.set_defaults(func=cmd_verify_bounds)
    p = sub.add_parser("gen-data", help="write the configured datasets to disk")
    common(p)
    p.set_defaults(func=cmd_gen_data)
    p = sub.add_parser("plot", help="turn a summary CSV into two-column plot data")
    p.add_argument("csv", metavar="CSV")
    p.add_argument("--out", metavar="DIR", help="output directory (default: next to the CSV)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PlotDataError, FileNotFoundError) as exc:
        print(f"gib: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
