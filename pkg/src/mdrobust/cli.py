"""Command-line entry point: ``mdrobust <command> [--plan FILE] [--out DIR] ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import pipeline as pl
from .adversary import AttackError
from .autodiff.tensor import ContractError
from .dataset import CLASS_NAMES, IngestionError, SplitError
from .models import ConfigError
from .training import TrainingError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--plan", help="JSON experiment plan; flags override its values")
    p.add_argument("--out", help=f"output root (default: plan 'output', then ${pl.OUTPUT_ENV}, then ./{pl.DEFAULT_OUTPUT})")
    p.add_argument("--seed", type=int, help="root seed for data, splits, initialization, noise and attacks")
    p.add_argument("--workers", type=int, help="process pool size for training cells")
    p.add_argument("--representation", choices=pl.REPRESENTATIONS, help="restrict the plan to one representation")
    p.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="mdrobust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth", parents=[common], help="generate the synthetic dataset")
    synth.add_argument("--config", help="synthetic class config JSON (default: bundled)")
    synth.add_argument("--per-class", type=int, help="recordings per class")
    ingest = sub.add_parser("ingest", parents=[common], help="build a dataset from text recordings")
    ingest.add_argument("index", help="CSV with 'path' and 'label' columns")
    ingest.add_argument("--adapter", help="recording header adapter JSON")
    ingest.add_argument("--bins", type=int, nargs=2, metavar=("LO", "HI"), help="range bins to integrate")
    sub.add_parser("train", parents=[common], help="train every plan cell")
    sub.add_parser("attack", parents=[common], help="craft PGD examples on the test split")
    sub.add_parser("evaluate", parents=[common], help="per-model reports and accuracy tables")
    sub.add_parser("transfer", parents=[common], help="transfer matrices")
    sub.add_parser("report", parents=[common], help="all aggregate tables")
    sub.add_parser("run", parents=[common], help="every stage in order")
    return parser


def load_plan(args) -> pl.ExperimentPlan:
    raw = pl.ExperimentPlan.from_file(args.plan).to_dict() if args.plan else pl.ExperimentPlan().to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.representation is not None:
        raw["representations"] = [args.representation]
    if getattr(args, "config", None) is not None:
        raw["dataset"] = dict(raw["dataset"], source="synthetic", config=args.config)
    if getattr(args, "per_class", None) is not None:
        raw["dataset"] = dict(raw["dataset"], per_class=args.per_class)
    return pl.ExperimentPlan.from_dict(raw)


def _print_dataset(manifest: dict) -> None:
    counts = Counter((e["split"], e["label"]) for e in manifest["samples"])
    print(f"dataset {manifest['config_hash']}: {len(manifest['samples'])} samples")
    for c, name in enumerate(CLASS_NAMES):
        per_split = " ".join(f"{s}={counts[(s, c)]}" for s in pl.SPLIT_NAMES)
        print(f"  {name:16s} {per_split}")


def _print_csv(path: Path) -> None:
    print(f"== {path}")
    print(path.read_text().rstrip())


def dispatch(args) -> int:
    if args.command == "ingest":
        manifest = pl.ingest(args.index, Path(args.out or ".") / "dataset", args.seed or 0, args.adapter,
                             tuple(args.bins) if args.bins else None)
        _print_dataset(manifest)
        return EXIT_OK
    plan = load_plan(args)
    out = pl.resolve_output(plan, args.out)
    if args.command == "synth":
        _print_dataset(pl.synthesize(plan, out))
    elif args.command == "train":
        for model_id, status in pl.train_all(plan, out).items():
            print(f"{model_id}: {status}")
    elif args.command == "attack":
        for model_id, linf in pl.attack_all(plan, out).items():
            print(f"{model_id}: max linf {linf:.6g}")
    elif args.command == "evaluate":
        pl.evaluate_all(plan, out)
        for rep in plan.representations:
            _print_csv(pl.report_dir(out) / f"accuracy_{rep}.csv")
    elif args.command == "transfer":
        for path in pl.transfer_all(plan, out).values():
            _print_csv(path)
    elif args.command in ("report", "run"):
        paths = pl.run_plan(plan, out) if args.command == "run" else pl.report_all(plan, out)
        for path in paths.values():
            _print_csv(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return dispatch(args)
    except (pl.PlanError, ConfigError, SplitError, IngestionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pl.MissingCellsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (TrainingError, AttackError, ContractError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
