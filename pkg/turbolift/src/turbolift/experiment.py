"""Cross-validated staged-training experiments on a generated suite.

The headline comparison: does the staged order (synthetic pretraining, then
ct, cbct, cbct_tst - each stage fine-tuning the last) beat training each
target straight from the pretrained weights?  Every preset starts from the
same per-seed pretraining checkpoint, so the comparison isolates the effect
of the intermediate stages.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import generate_pretrain_dataset
from .errors import ScheduleError
from .manifest import Manifest, load_manifest
from .model import ModelSpec, build_model
from .schedule import (
    StageEntry,
    StageSchedule,
    build_schedule,
    check_lineage,
    load_checkpoint,
)
from .augment import AugmentationConfig
from .train import METRIC_HEADER, TrainConfig, derive_seed, run_stage, write_csv

EXPERIMENT_HEADER = ["preset", "fold"] + METRIC_HEADER


def _desk_scale_train() -> TrainConfig:
    # Suite slices are small (48-64 px across), so the default +/-32 px
    # translation range would regularly push the organ out of frame; the
    # experiment harness caps shifts at a sixth of that scale.
    return TrainConfig(augmentation=AugmentationConfig(max_translation=8.0))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    epochs: int = 30
    pretrain_epochs: int = 20
    base_features: int = 16
    fold_scheme: str = "leave_one_out"
    ablations: bool = False
    pretrain_subjects: int = 10
    pretrain_slices: int = 4
    train: TrainConfig = field(default_factory=_desk_scale_train)

    def model_spec(self) -> ModelSpec:
        return ModelSpec(base_features=self.base_features).validate()


def run_schedule(
    schedule: StageSchedule,
    suite: Manifest,
    fold: dict,
    spec: ModelSpec,
    cfg: TrainConfig,
    out_dir,
    pretrain: Manifest = None,
    start_checkpoint=None,
    perfrec: str = "perfrec",
) -> list:
    """Run a schedule's stages in order, chaining checkpoints.

    ``start_checkpoint`` (a stem written by an earlier run) may satisfy a
    prefix of the schedule; its lineage decides how many leading stages are
    skipped.  Lineage mismatches abort rather than train on wrong weights.
    """
    order = schedule.order()
    start = 0
    checkpoint = None
    if start_checkpoint is not None:
        checkpoint = Path(start_checkpoint)
        _, sidecar = load_checkpoint(checkpoint, spec)
        got = tuple(sidecar.get("lineage", ()))
        if got != order[: len(got)]:
            raise ScheduleError(
                f"checkpoint lineage {list(got)} is not a prefix of the "
                f"schedule order {list(order)}"
            )
        start = len(got)

    results = []
    lineage = order[:start]
    for index in range(start, len(order)):
        entry = schedule.stages[index]
        if checkpoint is not None:
            model, sidecar = load_checkpoint(checkpoint, spec)
            check_lineage(sidecar, schedule.lineage_before(index))
        else:
            torch.manual_seed(derive_seed(cfg.seed, "init"))
            model = build_model(spec)
        stage_cfg = TrainConfig(
            learning_rate=cfg.learning_rate,
            epochs=entry.epochs,
            micro_batch=cfg.micro_batch,
            accumulation=cfg.accumulation,
            augmentation=cfg.augmentation,
            seed=derive_seed(cfg.seed, schedule.preset, entry.dataset, index),
            deterministic=cfg.deterministic,
        )
        result = run_stage(
            entry.dataset,
            model,
            spec,
            stage_cfg,
            suite,
            fold,
            Path(out_dir) / f"stage{index}_{entry.dataset}",
            lineage,
            pretrain=pretrain,
            perfrec=perfrec,
        )
        lineage = lineage + (entry.dataset,)
        checkpoint = result.checkpoint
        results.append(result)
    return results


def _median(values):
    return statistics.median(values) if values else float("nan")


def run_experiment(
    suite_dir, out_dir, config: ExperimentConfig, perfrec: str = "perfrec"
) -> dict:
    """One full seed: shared pretraining, then per-fold preset runs.

    Writes ``metrics.csv`` (every scored test slice, tagged by preset and
    fold) and ``summary.json`` (per preset x modality medians plus the
    staged-vs-direct comparison) under ``out_dir``; returns the summary.
    """
    suite = load_manifest(suite_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.model_spec()

    height, width = suite_shape(suite)
    pretrain = generate_pretrain_dataset(
        out / "pretrain_data",
        n_subjects=config.pretrain_subjects,
        slices_per_subject=config.pretrain_slices,
        height=height,
        width=width,
        seed=config.seed,
    )

    base_cfg = TrainConfig(
        learning_rate=config.train.learning_rate,
        micro_batch=config.train.micro_batch,
        accumulation=config.train.accumulation,
        augmentation=config.train.augmentation,
        seed=config.seed,
        deterministic=config.train.deterministic,
    )

    # The pretraining stage is identical for every preset and fold (same
    # data, same seed, deterministic kernels), so it is trained once and
    # its checkpoint reused as the common starting point.
    pre_schedule = StageSchedule(
        "direct", (StageEntry("pretrain_synth", config.pretrain_epochs),)
    )
    pre_results = run_schedule(
        pre_schedule,
        suite,
        fold={"train": [], "test": []},
        spec=spec,
        cfg=base_cfg,
        out_dir=out / "pretrain",
        pretrain=pretrain,
        perfrec=perfrec,
    )
    pre_ckpt = pre_results[0].checkpoint

    stage_epochs = {
        "pretrain_synth": config.pretrain_epochs,
        "ct": config.epochs,
        "cbct": config.epochs,
        "cbct_tst": config.epochs,
    }
    runs = [("turbolift", build_schedule("turbolift", stage_epochs))]
    for target in ("cbct", "cbct_tst"):
        runs.append(
            (f"direct_{target}", build_schedule("direct", stage_epochs, target=target))
        )
    if config.ablations:
        runs.append(("flipped", build_schedule("flipped", stage_epochs)))
        runs.append(("reversed", build_schedule("reversed", stage_epochs)))

    all_rows = []
    per_slice = {}  # (preset, modality) -> [dice]
    folds = suite.folds[config.fold_scheme]
    for fold in folds:
        for preset, sched in runs:
            results = run_schedule(
                sched,
                suite,
                fold,
                spec,
                base_cfg,
                out / f"fold{fold['fold']}" / preset,
                pretrain=pretrain,
                start_checkpoint=pre_ckpt,
                perfrec=perfrec,
            )
            for res in results:
                for row in res.metric_rows:
                    all_rows.append([preset, fold["fold"]] + row)
                    key = (preset, res.dataset)
                    per_slice.setdefault(key, []).append(float(row[5]))

    write_csv(out / "metrics.csv", EXPERIMENT_HEADER, all_rows)

    medians = {
        f"{preset}/{modality}": _median(v) for (preset, modality), v in per_slice.items()
    }
    comparisons = {}
    for modality, direct in (("cbct", "direct_cbct"), ("cbct_tst", "direct_cbct_tst")):
        staged = medians.get(f"turbolift/{modality}", float("nan"))
        baseline = medians.get(f"{direct}/{modality}", float("nan"))
        comparisons[modality] = {
            "turbolift_median_dice": staged,
            "direct_median_dice": baseline,
            "staged_at_least_direct": bool(staged >= baseline),
        }
    summary = {
        "seed": config.seed,
        "suite": str(Path(suite_dir)),
        "folds": len(folds),
        "epochs": config.epochs,
        "pretrain_epochs": config.pretrain_epochs,
        "base_features": config.base_features,
        "medians": medians,
        "comparisons": comparisons,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def suite_shape(suite: Manifest) -> tuple:
    """(height, width) of the suite's first slice."""
    from . import tsrio

    first = suite.entries[0]
    shape = tsrio.read_tensor(suite.path(first["image"])).shape
    return int(shape[0]), int(shape[1])
