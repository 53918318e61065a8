"""Stage schedules, order presets, and checkpoint lineage.

A schedule is an ordered list of (dataset, epochs) stages.  Each completed
stage writes a checkpoint whose sidecar records the lineage - the exact
sequence of datasets trained so far - and a hash of the architecture spec,
so a later stage can refuse weights that came from a different order or a
different network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import ScheduleError
from .manifest import MODALITIES
from .model import ModelSpec, build_model

PRESETS = ("turbolift", "flipped", "reversed", "direct")

_TARGETS = ("ct", "cbct", "cbct_tst")


def stage_order(preset: str, target: str = None, pretrain: bool = True) -> tuple:
    """Dataset order for a preset.

    turbolift: easiest/largest first - pretrain_synth, ct, cbct, cbct_tst
    flipped:   last two swapped    - pretrain_synth, ct, cbct_tst, cbct
    reversed:  hardest first       - pretrain_synth, cbct_tst, cbct, ct
    direct:    single ``target`` stage straight from pretraining

    ``pretrain=False`` drops the synthetic pretraining stage (random init).
    """
    if preset == "turbolift":
        order = ["pretrain_synth", "ct", "cbct", "cbct_tst"]
    elif preset == "flipped":
        order = ["pretrain_synth", "ct", "cbct_tst", "cbct"]
    elif preset == "reversed":
        order = ["pretrain_synth", "cbct_tst", "cbct", "ct"]
    elif preset == "direct":
        if target not in _TARGETS:
            raise ScheduleError(
                f"direct preset needs target in {_TARGETS}, got {target!r}"
            )
        order = ["pretrain_synth", target]
    else:
        raise ScheduleError(f"unknown preset {preset!r}; choose from {PRESETS}")
    if not pretrain:
        order = order[1:]
    return tuple(order)


@dataclass(frozen=True)
class StageEntry:
    dataset: str
    epochs: int


@dataclass(frozen=True)
class StageSchedule:
    preset: str
    stages: tuple  # of StageEntry

    def order(self) -> tuple:
        return tuple(s.dataset for s in self.stages)

    def lineage_before(self, index: int) -> tuple:
        """Datasets a checkpoint must have seen before stage ``index`` runs."""
        return self.order()[:index]


def build_schedule(
    preset: str,
    epochs,
    target: str = None,
    pretrain: bool = True,
) -> StageSchedule:
    """``epochs`` is an int for all stages or a dataset -> epochs mapping."""
    order = stage_order(preset, target, pretrain)
    stages = []
    for dataset in order:
        if dataset not in MODALITIES:
            raise ScheduleError(f"unknown dataset {dataset!r}")
        if isinstance(epochs, dict):
            n = int(epochs.get(dataset, epochs.get("default", 0)))
        else:
            n = int(epochs)
        if n < 1:
            raise ScheduleError(f"stage {dataset!r} needs epochs >= 1, got {n}")
        stages.append(StageEntry(dataset, n))
    return StageSchedule(preset, tuple(stages))


def save_checkpoint(stem, model, spec: ModelSpec, lineage, seed: int) -> Path:
    """Write ``{stem}.pt`` (weights) and ``{stem}.json`` (lineage sidecar)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), stem.with_suffix(".pt"))
    sidecar = {
        "lineage": list(lineage),
        "seed": int(seed),
        "spec_hash": spec.spec_hash(),
        "spec": {
            "in_channels": spec.in_channels,
            "base_features": spec.base_features,
            "depth": spec.depth,
        },
    }
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stem


def load_checkpoint(stem, spec: ModelSpec):
    """Load weights into a fresh model; returns (model, sidecar dict).

    Refuses checkpoints whose recorded spec hash differs from ``spec``.
    """
    stem = Path(stem)
    sidecar_path = stem.with_suffix(".json")
    weights_path = stem.with_suffix(".pt")
    if not sidecar_path.is_file() or not weights_path.is_file():
        raise ScheduleError(f"no checkpoint at {stem}(.pt/.json)")
    sidecar = json.loads(sidecar_path.read_text())
    if sidecar.get("spec_hash") != spec.spec_hash():
        raise ScheduleError(
            f"{stem}: checkpoint was trained with a different architecture "
            f"(hash {sidecar.get('spec_hash', '?')[:12]}... != {spec.spec_hash()[:12]}...)"
        )
    model = build_model(spec)
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    return model, sidecar


def check_lineage(sidecar: dict, expected) -> None:
    """Raise unless the checkpoint's lineage matches the schedule prefix."""
    got = tuple(sidecar.get("lineage", ()))
    if got != tuple(expected):
        raise ScheduleError(
            f"checkpoint lineage {list(got)} does not match the schedule "
            f"prefix {list(expected)}"
        )
