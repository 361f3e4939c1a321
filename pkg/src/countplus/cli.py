"""Command-line front end.

Subcommands: build a sketch from a TSV stream, query items with estimates
and intervals, run an evaluation scenario, tune depth for a budget, and
export the fitted error log-density.  Data goes to stdout as CSV;
diagnostics go to stderr.  Seeds resolve as flag > CMX_SEED env > default.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import estimators as est
from . import intervals as ci
from . import logconcave, simlab, tuning
from .empirical import error_sample
from .sketch import CountPlusSketch, SketchConfig, ingest_tsv


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("CMX_SEED")
    if env is not None:
        return int(env)
    return 0


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def cmd_build(args) -> int:
    seed = _resolve_seed(args)
    sketch = CountPlusSketch(
        SketchConfig.from_master_seed(args.depth, args.width, seed)
    )
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            stats = ingest_tsv(fh, sketch, strict=not args.lenient)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    sketch.save(args.out)
    print(
        f"r={sketch.config.depth} k={sketch.config.width} "
        f"n_tot={sketch.total_count} lines={stats.lines_read} "
        f"skipped={stats.lines_skipped}"
    )
    for err in stats.errors:
        print(f"skipped: {err}", file=sys.stderr)
    return 0


def _load_items(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def cmd_query(args) -> int:
    try:
        sketch = CountPlusSketch.load(args.sketch)
        items = _load_items(args.items)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    seed = _resolve_seed(args)
    rng = np.random.default_rng(seed)
    level = args.level
    writer = csv.writer(sys.stdout)
    writer.writerow(["item", "estimate", "lo", "hi", "level", "kind"])

    if args.joint:
        from .regression import joint_mle

        joint, _ = joint_mle(sketch, items)
        for item, theta in zip(joint.items, joint.theta):
            writer.writerow([item, f"{theta:.6f}", "", "", "", "joint_mle"])
        print(
            f"joint solve: converged={joint.converged} "
            f"iterations={joint.iterations}",
            file=sys.stderr,
        )
        return 0

    errors = error_sample(sketch)
    r = sketch.config.depth
    a, b = (1 - level) / 2, 1 - (1 - level) / 2

    density = None
    if args.estimator in ("mle", "debiased-mle", "bayes"):
        density = logconcave.fit(errors)

    if args.estimator == "min":
        stat, debias_mu = est.min_statistic(), 0.0
    elif args.estimator == "debiased-min":
        stat, debias_mu = est.min_statistic(), None
    elif args.estimator == "debiased-mean":
        stat, debias_mu = est.mean_statistic(), None
    elif args.estimator == "debiased-median":
        stat, debias_mu = est.median_statistic(), None
    elif args.estimator in ("mle", "debiased-mle", "bayes"):
        stat, debias_mu = est.mle_statistic(density), None
    else:
        return _fail(f"unknown estimator {args.estimator!r}")

    if args.estimator in ("mle", "debiased-mle", "bayes"):
        pre = est.preprocess_bootstrap(stat, errors, r, rng=rng)
    else:
        pre = est.preprocess_columns(stat, sketch)

    for item in items:
        raw = est.raw_statistic(sketch, item, stat)
        if args.estimator == "min" or args.estimator == "mle":
            value = raw
        elif args.estimator == "bayes":
            value = est.bayes_estimate(sketch, item, density).value
        else:
            value = max(0.0, raw - pre.mu)
        interval = ci.bootstrap_ci(raw, pre.cdf, a, b)
        writer.writerow(
            [item, f"{value:.6f}", f"{interval.lo:.6f}", f"{interval.hi:.6f}",
             level, interval.kind]
        )
    return 0


def _read_config(path: str) -> dict:
    kv = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, value = line.split("=", 1)
            kv[key.strip()] = value.strip()
    return kv


def cmd_eval(args) -> int:
    try:
        kv = _read_config(args.scenario)
        if args.seed is not None:
            kv["seed"] = str(args.seed)
        elif "seed" not in kv and os.environ.get("CMX_SEED"):
            kv["seed"] = os.environ["CMX_SEED"]
        cfg = simlab.ScenarioConfig.from_mapping(kv)
        report = simlab.run_scenario(cfg)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))

    rows = list(report.report_rows())
    fields = sorted({k for row in rows for k in row}, key=lambda k: (k != "scenario", k))
    writer = csv.DictWriter(sys.stdout, fieldnames=fields)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    if args.queries_out:
        with open(args.queries_out, "w", encoding="utf-8", newline="") as fh:
            qw = csv.DictWriter(
                fh,
                fieldnames=["item", "truth", "estimator", "estimate", "lo",
                            "hi", "level", "kind"],
            )
            qw.writeheader()
            for row in report.query_rows:
                qw.writerow(row)
    print(
        f"scenario={report.scenario} queries={report.n_queries} "
        f"wall={report.wall_time:.2f}s",
        file=sys.stderr,
    )
    return 0


def _parse_depths(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in spec.split(",") if x]


def cmd_tune(args) -> int:
    try:
        sketch = CountPlusSketch.load(args.sketch)
        base = tuning.empirical_error_pmf(sketch, args.grid_max)
        levels = [float(x) for x in args.levels.split(",") if x]
        depths = _parse_depths(args.depths)
        curve = tuning.width_curve(base, args.budget, levels, depths,
                                   grid_max=args.grid_max)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    writer = csv.writer(sys.stdout)
    writer.writerow(["level", "r", "width", "is_optimal"])
    for level, depth, width, opt in curve.rows():
        writer.writerow([level, depth, width, int(opt)])
    return 0


def cmd_export_density(args) -> int:
    try:
        sketch = CountPlusSketch.load(args.sketch)
        density = logconcave.fit(error_sample(sketch, trim_fraction=args.trim))
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["knot", "phi"])
        for knot, phi in density.to_csv_rows():
            writer.writerow([knot, phi])
    finally:
        if args.out:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countplus",
        description="Count+ sketching with calibrated estimators and intervals",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="sketch a TSV stream")
    p_build.add_argument("--input", required=True)
    p_build.add_argument("--depth", type=int, required=True)
    p_build.add_argument("--width", type=int, required=True)
    p_build.add_argument("--seed", type=int, default=None)
    p_build.add_argument("--out", required=True)
    p_build.add_argument("--lenient", action="store_true",
                         help="skip malformed lines instead of aborting")
    p_build.set_defaults(func=cmd_build)

    p_query = sub.add_parser("query", help="estimate counts for listed items")
    p_query.add_argument("--sketch", required=True)
    p_query.add_argument("--items", required=True)
    p_query.add_argument(
        "--estimator",
        default="debiased-mle",
        choices=["min", "debiased-min", "debiased-mean", "debiased-median",
                 "mle", "debiased-mle", "bayes"],
    )
    p_query.add_argument("--level", type=float, default=0.95)
    p_query.add_argument("--joint", action="store_true",
                         help="jointly estimate the item set")
    p_query.add_argument("--seed", type=int, default=None)
    p_query.set_defaults(func=cmd_query)

    p_eval = sub.add_parser("eval", help="run an evaluation scenario")
    p_eval.add_argument("--scenario", required=True,
                        help="flat key=value config file")
    p_eval.add_argument("--queries-out", default=None)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_tune = sub.add_parser("tune", help="pick depth for a memory budget")
    p_tune.add_argument("--sketch", required=True,
                        help="a depth-1 sketch of the stream")
    p_tune.add_argument("--budget", type=int, required=True)
    p_tune.add_argument("--levels", default="0.5,0.9,0.99")
    p_tune.add_argument("--depths", default="1..16",
                        help="comma list or lo..hi range")
    p_tune.add_argument("--grid-max", type=int, default=4096)
    p_tune.set_defaults(func=cmd_tune)

    p_exp = sub.add_parser("export-density", help="CSV of the fitted log-density")
    p_exp.add_argument("--sketch", required=True)
    p_exp.add_argument("--out", default=None)
    p_exp.add_argument("--trim", type=float, default=0.01)
    p_exp.set_defaults(func=cmd_export_density)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
