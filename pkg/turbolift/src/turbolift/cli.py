"""``turbolift`` command line: staged training runs over a generated suite.

Exit codes mirror the toolkit: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

from .augment import AugmentationConfig
from .data import generate_pretrain_dataset
from .errors import TurboliftError
from .experiment import ExperimentConfig, run_experiment, run_schedule, suite_shape
from .manifest import load_manifest
from .model import ModelSpec
from .schedule import PRESETS, build_schedule
from .train import TrainConfig


def cmd_pretrain_data(args) -> int:
    manifest = generate_pretrain_dataset(
        args.out,
        n_subjects=args.subjects,
        slices_per_subject=args.slices,
        height=args.height,
        width=args.width,
        seed=args.seed,
    )
    print(
        f"pretrain data: {len(manifest.subjects)} subjects, "
        f"{len(manifest.entries)} slices -> {args.out}"
    )
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        augmentation=AugmentationConfig(max_translation=args.max_translation),
        seed=args.seed,
    )


def cmd_run(args) -> int:
    suite = load_manifest(args.suite)
    spec = ModelSpec(base_features=args.base_features).validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    epochs = {
        "pretrain_synth": args.pretrain_epochs or args.epochs,
        "ct": args.epochs,
        "cbct": args.epochs,
        "cbct_tst": args.epochs,
    }
    schedule = build_schedule(
        args.preset, epochs, target=args.target, pretrain=not args.no_pretrain
    )
    pretrain = None
    if not args.no_pretrain:
        height, width = suite_shape(suite)
        pretrain = generate_pretrain_dataset(
            out / "pretrain_data", height=height, width=width, seed=args.seed
        )
    fold = suite.fold(args.fold_scheme, args.fold)
    results = run_schedule(
        schedule,
        suite,
        fold,
        spec,
        _train_config(args),
        out,
        pretrain=pretrain,
        perfrec=args.perfrec,
    )
    for res in results:
        dices = [float(r[5]) for r in res.metric_rows]
        mid = statistics.median(dices) if dices else float("nan")
        print(f"stage {res.dataset}: {len(res.metric_rows)} test slices, median dice {mid:.4f}")
    print(f"lineage: {' -> '.join(schedule.order())} -> {out}")
    return 0


def cmd_experiment(args) -> int:
    config = ExperimentConfig(
        seed=args.seed,
        epochs=args.epochs,
        pretrain_epochs=args.pretrain_epochs or args.epochs,
        base_features=args.base_features,
        ablations=args.ablations,
        train=_train_config(args),
    )
    summary = run_experiment(args.suite, args.out, config, perfrec=args.perfrec)
    for modality, cmp in summary["comparisons"].items():
        mark = ">=" if cmp["staged_at_least_direct"] else "<"
        print(
            f"{modality}: turbolift {cmp['turbolift_median_dice']:.4f} "
            f"{mark} direct {cmp['direct_median_dice']:.4f}"
        )
    print(f"summary -> {Path(args.out) / 'summary.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turbolift",
        description="staged liver-segmentation training on perfusion suites",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("pretrain-data", help="generate the synthetic pretraining set")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--slices", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain_data)

    p = sub.add_parser("run", help="run one preset schedule on one fold")
    p.add_argument("--suite", required=True, help="generated suite directory")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--target", choices=("ct", "cbct", "cbct_tst"),
                   help="dataset for the direct preset")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--fold-scheme", default="leave_one_out")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--pretrain-epochs", type=int, default=0,
                   help="override epochs for the pretraining stage")
    p.add_argument("--base-features", type=int, default=16)
    p.add_argument("--max-translation", type=float, default=8.0)
    p.add_argument("--no-pretrain", action="store_true",
                   help="start from random weights instead of the synthetic pretraining")
    p.add_argument("--perfrec", default="perfrec", help="scorer executable")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser(
        "experiment",
        help="cross-validated staged-vs-direct comparison for one seed",
    )
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--pretrain-epochs", type=int, default=0)
    p.add_argument("--base-features", type=int, default=16)
    p.add_argument("--max-translation", type=float, default=8.0)
    p.add_argument("--ablations", action="store_true",
                   help="also run the flipped and reversed orders")
    p.add_argument("--perfrec", default="perfrec")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except TurboliftError as exc:
        print(f"turbolift {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"turbolift {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
