"""Command-line interface: ``onpolicy {train,study,analyze,plot}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Relative output locations are placed under ``$ONPOLICY_OUTPUT_ROOT``
(default ``./runs``).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .config import (ChoiceConfig, config_to_text, default_config_text,
                     load_config, parse_config_text, resolve_key)
from .errors import ConfigError, NumericError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
OUTPUT_ROOT_ENV = "ONPOLICY_OUTPUT_ROOT"


class UsageExit(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageExit(f"{self.prog}: error: {message}")


def output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _resolve_out(path, default):
    path = path or default
    return path if os.path.isabs(path) else os.path.join(output_root(), path)


# -- train ---------------------------------------------------------------------

def cmd_train(args) -> int:
    from .trainer import train_run

    if args.print_default:
        sys.stdout.write(default_config_text())
        return EXIT_OK
    if args.config:
        cfg, run = load_config(args.config)
    else:
        cfg, run = parse_config_text("")
    if args.set:
        text = config_to_text(cfg, run) + "\n".join(args.set) + "\n"
        cfg, run = parse_config_text(text)
    for name in ("seed", "env", "budget", "eval_every", "eval_episodes"):
        value = getattr(args, name)
        if value is not None:
            setattr(run, name, value)
    if args.no_checkpoint:
        run.checkpoint = False
    out = _resolve_out(args.out, os.path.join("train", f"{cfg.config_hash()}-seed{run.seed}"))
    result = train_run(cfg, run, out)
    print(f"score {result.score:.6g} over {len(result.curve)} evaluations; outputs in {out}")
    if result.failed:
        print(f"run failed: {result.failure}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- study ---------------------------------------------------------------------

def cmd_study(args) -> int:
    from .study import load_space, preset, run_study

    if bool(args.preset) == bool(args.space):
        raise UsageError("give exactly one of --preset or --space")
    space = preset(args.preset, desk=args.desk) if args.preset else load_space(args.space)
    records = _resolve_out(args.records, f"study-{space.name}.jsonl")

    def progress(line):
        score = line.get("score")
        tag = "failed" if line.get("failed") else f"score {score:.4g}"
        print(f"config {line['config_index']} seed {line['seed_index']}: {tag}", flush=True)

    recs = run_study(space, args.n_configs, args.seeds, args.budget, records,
                     study_seed=args.study_seed, workers=args.workers, env=args.env,
                     eval_every=args.eval_every, eval_episodes=args.eval_episodes,
                     progress=progress if not args.quiet else None)
    print(f"{len(recs)} configurations recorded in {records}")
    return EXIT_OK


# -- analyze -------------------------------------------------------------------

def _fmt_value(v):
    if v is None:
        return "None"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def analyze_records(records, choice, out_dir, env, q=0.95, frac=0.05, baseline=None):
    """Write the conditional-percentile, top-fraction, ECDF and quantile outputs."""
    from . import plots, stats
    from .trainer import random_baseline

    os.makedirs(out_dir, exist_ok=True)
    values = stats.choice_values(records, choice)
    rows = []
    for v in values:
        est = stats.conditional_percentile(records, choice, v, q)
        rows.append((v, est))
    with open(os.path.join(out_dir, f"conditional_{choice}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "p95", "ci_low", "ci_high", "n"])
        for v, est in rows:
            w.writerow([_fmt_value(v), repr(est.point), repr(est.low), repr(est.high), est.n])
    labels = [_fmt_value(v) for v, _ in rows]
    with open(os.path.join(out_dir, f"conditional_{choice}.svg"), "w") as fh:
        fh.write(plots.bar_chart(labels, [e.point for _, e in rows],
                                 f"{env}: {int(q * 100)}th percentile by {choice}", "score",
                                 [(e.low, e.high) for _, e in rows]))

    top = stats.top_fraction_distribution(records, choice, frac)
    with open(os.path.join(out_dir, f"top_{choice}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "frequency"])
        for v, f in top.items():
            w.writerow([_fmt_value(v), repr(f)])
    with open(os.path.join(out_dir, f"top_{choice}.svg"), "w") as fh:
        fh.write(plots.bar_chart([_fmt_value(v) for v in top], list(top.values()),
                                 f"{env}: {choice} in top {frac:.0%}", "frequency"))

    scores = [r.median_score for r in records]
    table = stats.quantile_table(scores)
    with open(os.path.join(out_dir, "quantiles.csv"), "w") as fh:
        fh.write(stats.format_quantile_table({env: table}))

    if baseline is None:
        baseline = random_baseline(ChoiceConfig(), env)
    try:
        x, y = stats.ecdf_rescaled(scores, baseline)
    except UsageError as exc:
        print(f"skipping ECDF: {exc}", file=sys.stderr)
    else:
        with open(os.path.join(out_dir, "ecdf.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rescaled_score", "fraction"])
            for a, b in zip(x, y):
                w.writerow([repr(float(a)), repr(float(b))])
        with open(os.path.join(out_dir, "ecdf.svg"), "w") as fh:
            fh.write(plots.line_chart(list(x), list(y), f"{env}: ECDF of scores",
                                      "score (0 = random, 1 = best)", "fraction", step=True))
    return rows, top, table


def cmd_analyze(args) -> int:
    from .study import load_records

    choice = resolve_key(args.choice)
    if not os.path.exists(args.records):
        raise UsageError(f"records file {args.records} not found")
    records = load_records(args.records)
    if not records:
        raise UsageError(f"no scored records in {args.records}")
    envs = sorted({r.env for r in records})
    if args.env:
        if args.env not in envs:
            raise UsageError(f"no records for environment {args.env!r}")
        envs = [args.env]
    out_root = _resolve_out(args.out, "analysis")
    for env in envs:
        recs = [r for r in records if r.env == env]
        out_dir = os.path.join(out_root, env)
        rows, _, table = analyze_records(recs, choice, out_dir, env, args.q, args.frac)
        print(f"{env}: {len(recs)} configurations")
        for v, est in rows:
            print(f"  {choice}={_fmt_value(v)}: p{int(args.q * 100)} {est.point:.4g} "
                  f"[{est.low:.4g}, {est.high:.4g}] n={est.n}")
        print(f"  quantiles {table}; outputs in {out_dir}")
    return EXIT_OK


# -- plot ----------------------------------------------------------------------

def cmd_plot(args) -> int:
    from . import plots

    path = args.metrics
    if os.path.isdir(path):
        path = os.path.join(path, "metrics.csv")
    if not os.path.exists(path):
        raise UsageError(f"metrics file {path} not found")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and args.column not in rows[0]:
        raise UsageError(f"unknown column {args.column!r}")
    pts = [(float(r["env_steps"]), float(r[args.column])) for r in rows if r[args.column] != ""]
    out = args.out or os.path.join(os.path.dirname(path), f"{args.column}.svg")
    with open(out, "w") as fh:
        fh.write(plots.line_chart([p[0] for p in pts], [p[1] for p in pts],
                                  f"{args.column} vs env steps", "env steps", args.column))
    print(f"wrote {out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> Parser:
    p = Parser(prog="onpolicy", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    t = sub.add_parser("train", help="train one agent")
    t.add_argument("config", nargs="?", help="config file (defaults when omitted)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a key")
    t.add_argument("--seed", type=int)
    t.add_argument("--env")
    t.add_argument("--budget", type=int, help="total environment steps")
    t.add_argument("--eval-every", type=int)
    t.add_argument("--eval-episodes", type=int)
    t.add_argument("--out", help="output directory")
    t.add_argument("--no-checkpoint", action="store_true")
    t.add_argument("--print-default", action="store_true", help="print the default config")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("study", help="run a random-search study")
    s.add_argument("--preset", help="built-in design name")
    s.add_argument("--space", help="JSON space file")
    s.add_argument("--desk", action="store_true", help="desk-scale base for presets")
    s.add_argument("--n-configs", type=int, default=10)
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--budget", type=int, default=50_000)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--env", default="PointMass2D")
    s.add_argument("--study-seed", type=int, default=0)
    s.add_argument("--eval-every", type=int, default=10_000)
    s.add_argument("--eval-episodes", type=int, default=20)
    s.add_argument("--records", help="records file (JSON lines)")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_study)

    a = sub.add_parser("analyze", help="statistics of a study for one choice")
    a.add_argument("records")
    a.add_argument("--choice", required=True)
    a.add_argument("--out", help="output directory")
    a.add_argument("--env")
    a.add_argument("--q", type=float, default=0.95)
    a.add_argument("--frac", type=float, default=0.05)
    a.set_defaults(func=cmd_analyze)

    pl = sub.add_parser("plot", help="plot a metrics column of a training run")
    pl.add_argument("metrics", help="metrics.csv or run directory")
    pl.add_argument("--column", default="eval_return")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageExit as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        key = f" (key: {exc.key})" if getattr(exc, "key", None) else ""
        print(f"configuration error{key}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, OSError, json.JSONDecodeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
