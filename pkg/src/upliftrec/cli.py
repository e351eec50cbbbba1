"""Command-line entry point: ``upliftrec <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import yaml

from . import data, evaluation, pipeline, planner, synth
from .pipeline import RunConfig

_log = logging.getLogger("upliftrec")

STAGE_COMMANDS = ("train", "cluster", "augment", "estimate", "plan")

HP_FLAGS = {
    "lambda": float,
    "C": int,
    "K": int,
    "K_p": str,
    "K_s": str,
    "gamma": float,
    "epsilon": int,
    "v_p": float,
    "v_a": float,
    "v_m": float,
    "alpha": float,
    "delta_t": int,
    "N": int,
}
TRAIN_FLAGS = {"d": int, "neg_ratio": int, "learning_rate": float, "epochs": int, "l2": float, "batch_size": int, "loss": str}


def _count_or_all(v: str):
    return None if v == "all" else int(v)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    g = p.add_argument_group("data")
    g.add_argument("--train", dest="train_path")
    g.add_argument("--unbiased", dest="unbiased_path")
    g.add_argument("--categories", dest="categories_path")
    g.add_argument("--treatment-categories", dest="treatment_categories", choices=("cluster", "labels"), help="plan over k-means clusters or the category file")
    g.add_argument("--format", dest="data_format", choices=("tsv", "coat"))
    g.add_argument("--has-position", action="store_true", default=None)
    g.add_argument("--valid-ratio", type=float)
    g = p.add_argument_group("hyperparameters")
    for name, typ in HP_FLAGS.items():
        g.add_argument(f"--{name}", dest=f"hp_{name}", type=typ, metavar=name.upper() if typ is not str else "INT|all")
    g = p.add_argument_group("backend training")
    for name, typ in TRAIN_FLAGS.items():
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"tr_{name}", type=typ)
    g = p.add_argument_group("run")
    g.add_argument("--policy", choices=pipeline.POLICIES)
    g.add_argument("--budget", choices=("per_category", "aggregate"))
    g.add_argument("--cutoffs", type=lambda s: tuple(int(x) for x in s.split(",")))
    g.add_argument("--seed", type=int)
    g.add_argument("--output-dir")
    g.add_argument("--cache-dir")
    g.add_argument("--workers", type=int)
    g.add_argument("--override", action="store_true", default=None, help="allow hyperparameters outside the tuning ranges")
    g.add_argument("--fresh", action="store_true", help="ignore cached stages and overwrite the output directory")


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = pipeline.load_config(args.config) if args.config else RunConfig()
    top, hp, tr = {}, {}, {}
    for key, val in vars(args).items():
        if val is None:
            continue
        if key.startswith("hp_"):
            name = key[3:]
            hp[name] = _count_or_all(val) if name in ("K_p", "K_s") else val
        elif key.startswith("tr_"):
            tr[key[3:]] = val
        elif key in {f.name for f in dataclasses.fields(RunConfig)}:
            top[key] = val
    out = cfg.replace(**top, **hp)
    if tr:
        out = dataclasses.replace(out, train=dataclasses.replace(out.train, **tr))
    return out


def _print_result(res: pipeline.RunResult) -> None:
    sys.stdout.write(pipeline.format_report(res.valid, res.test))
    for stage, secs in res.timings.items():
        _log.info("%-9s %.2fs%s", stage, secs, " (built)" if stage in res.built else "")


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    until = args.command if args.command in STAGE_COMMANDS else None
    res = pipeline.run_pipeline(cfg, fresh=args.fresh, until=until)
    if res is None:
        print(f"stage {until} done; artifacts under {cfg.cache_root}")
    else:
        _print_result(res)
    return 0


def cmd_evaluate(args) -> int:
    if args.recs is None:
        return cmd_run(args)
    if not (args.train_path and args.test):
        raise SystemExit("evaluate --recs needs --train and --test")
    recs = planner.lists_only(planner.read_recommendations(args.recs))
    train = data.parse_interactions(args.train_path, bool(args.has_position))
    test = data.parse_interactions(args.test, bool(args.has_position))
    cmap = data.load_categories(args.categories_path) if args.categories_path else None
    pop = data.build_popularity(train)
    cutoffs = args.cutoffs or (10, 20)
    report = evaluation.evaluate_run(
        recs,
        data.items_by_user(test, positives_only=True),
        data.items_by_user(train, positives_only=True),
        cmap,
        pop,
        cutoffs,
    )
    sys.stdout.write(report.as_table())
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.as_table())
        (out / "report.kv").write_text(report.as_kv())
    return 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    values = [yaml.safe_load(v) for v in args.values.split(",")]
    rows = pipeline.sweep(cfg, args.param, values, fresh=args.fresh)
    table = pipeline.sweep_table(rows, args.param)
    best = pipeline.best_row(rows, args.select)
    table += f"best {args.param} by valid {args.select}: {best.value}\n"
    table += "".join(f"{args.param}={r.value}: {r.seconds:.2f}s\n" for r in rows)
    sys.stdout.write(table)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    (Path(cfg.output_dir) / f"sweep_{args.param}.txt").write_text(table)
    return 0


def cmd_simulate(args) -> int:
    world = synth.make_world(args.users, args.C, args.items_per_category, args.seed)
    policy = synth.Policy.parse(args.policy)
    train, unbiased = synth.recommendation_dataset(world, policy, args.train_windows, args.test_windows, args.window_len, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.write_interactions(out / "train.tsv", train, True)
    data.write_interactions(out / "unbiased.tsv", unbiased, True)
    data.write_categories(out / "categories.tsv", world.category_map())
    synth.write_truth(out / "truth.tsv", world)
    print(f"wrote {len(train)} train and {len(unbiased)} unbiased records for {args.users} users to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="upliftrec", description="Category-exposure uplift reranking for top-N recommendation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS + ("pipeline",):
        p = sub.add_parser(name, help="run the pipeline" + ("" if name == "pipeline" else f" up to the {name} stage"))
        _add_run_flags(p)
        p.set_defaults(func=cmd_run)
    p = sub.add_parser("evaluate", help="score a recommendation file, or run the full pipeline")
    _add_run_flags(p)
    p.add_argument("--recs", help="recommendation file (user, item, rank, score)")
    p.add_argument("--test", help="held-out interactions used with --recs")
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("sweep", help="one run per value of a single hyperparameter")
    _add_run_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated grid")
    p.add_argument("--select", default="recall@10", help="validation metric used to pick the best point")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("simulate", help="write a synthetic dataset with known response curves")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=300)
    p.add_argument("--C", type=int, default=5)
    p.add_argument("--items-per-category", type=int, default=60)
    p.add_argument("--policy", default="confounded:0.7")
    p.add_argument("--train-windows", type=int, default=3)
    p.add_argument("--test-windows", type=int, default=2)
    p.add_argument("--window-len", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except pipeline.StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (pipeline.StaleArtifactError, pipeline.ConfigError, data.ParseError, data.DomainError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
