"""Command-line entry point: ``pase <verb> [--config FILE] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import data as ds
from .bench import Experiment, ExperimentConfig, load_report, render_report
from .errors import PaseError, StageError

logger = logging.getLogger("pase")

FORMATS = ("markdown", "json", "csv")
SUFFIX = {"markdown": "md", "json": "json", "csv": "csv"}


def _experiment(args) -> Experiment:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed).validate()
    return Experiment(cfg, out_dir=args.out, cache=not args.no_cache)


def cmd_config(args):
    print(json.dumps(ExperimentConfig().to_dict(), indent=1))


def cmd_gen_data(args):
    exp = _experiment(args)
    full, split = exp.data()
    ds.save_csv(full, exp.workdir / "dataset.csv")
    print(f"dataset: {full.n} samples x {full.dim} features, {full.class_count} classes")
    print(f"split: train={split.target_train.n} test={split.target_test.n} attack_pool={split.attack_pool.n}")
    print(exp.workdir)


def cmd_train_baseline(args):
    exp = _experiment(args)
    exp.baseline()
    print(exp.workdir / "baseline.json")


def cmd_train_pase(args):
    exp = _experiment(args)
    ens = exp.pase()
    print(f"k={ens.k} fold sizes {ens.folds.sizes()}")
    print(exp.workdir / "pase")


def cmd_train_pate(args):
    exp = _experiment(args)
    teachers, _, _ = exp.pate()
    print(f"{len(teachers.teachers)} teachers")
    print(exp.workdir / "pate")


def cmd_attack(args):
    exp = _experiment(args)
    for role, rep in exp.attack().items():
        print(f"{role:9s} attack accuracy {100 * rep.accuracy:6.2f}%  confusion {rep.confusion}")


def _write_reports(report, directory: Path):
    for fmt in FORMATS:
        (directory / f"report.{SUFFIX[fmt]}").write_text(render_report(report, fmt))


def cmd_run(args):
    exp = _experiment(args)
    report = exp.report()
    _write_reports(report, exp.workdir)
    print(render_report(report, args.format))


def cmd_report(args):
    if args.report:
        reports = [load_report(p) for p in args.report]
        print(render_report(reports if len(reports) > 1 else reports[0], args.format))
        return
    exp = _experiment(args)
    path = exp.workdir / "report.json"
    report = load_report(path) if exp.cache and path.exists() else exp.report()
    print(render_report(report, args.format))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pase", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); defaults are used if omitted")
    common.add_argument("--seed", type=int, help="override the config's master seed")
    common.add_argument("--out", help="output root (else $PASE_OUT, else config out_dir)")
    common.add_argument("--no-cache", action="store_true", help="recompute stages even if artifacts exist")
    common.add_argument("-v", "--verbose", action="count", default=0)

    verbs = {
        "gen-data": (cmd_gen_data, "build the dataset and the train/test/attack split"),
        "train-baseline": (cmd_train_baseline, "train the undefended model"),
        "train-pase": (cmd_train_pase, "train the switching ensemble"),
        "train-pate": (cmd_train_pate, "train teachers and the student"),
        "attack": (cmd_attack, "train shadows + attack models and attack every target"),
        "run": (cmd_run, "full pipeline; writes report.{md,json,csv}"),
        "report": (cmd_report, "render a report"),
    }
    for name, (fn, help_) in verbs.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        if name in ("run", "report"):
            p.add_argument("--format", choices=FORMATS, default="markdown")
        if name == "report":
            p.add_argument("--report", nargs="+", help="existing report.json file(s) to render")
    p = sub.add_parser("config", help="print the default config")
    p.set_defaults(func=cmd_config, verbose=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PaseError as exc:
        print(f"error: [{args.verb}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
