"""Stage training loop, inference, mask export, and metric collection.

One stage = train the current model on one dataset's training subjects,
then segment that dataset's held-out subjects, write the thresholded masks
as TSR files, and score them by shelling out to the reconstruction
toolkit's ``eval`` command - keeping the two packages coupled only through
files and the command line.
"""

from __future__ import annotations

import csv
import subprocess
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import tsrio
from .augment import AugmentationConfig, augment
from .data import load_pairs
from .errors import ConfigurationError, ManifestError, TurboliftError
from .manifest import Manifest
from .model import ModelSpec
from .schedule import save_checkpoint

LOSS_HEADER = ["epoch", "stage", "train_loss", "val_loss"]
METRIC_HEADER = [
    "stage",
    "subject",
    "modality",
    "image",
    "test_only",
    "dice",
    "iou",
    "precision",
    "sensitivity",
    "specificity",
]

THRESHOLD = 0.5


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50  # desk scale; the reference regime is 500
    micro_batch: int = 8
    accumulation: int = 8  # effective batch = micro_batch * accumulation
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0
    deterministic: bool = True

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 1 or self.micro_batch < 1 or self.accumulation < 1:
            raise ConfigurationError(
                "epochs, micro_batch, and accumulation must all be >= 1"
            )
        self.augmentation.validate()
        return self


@dataclass
class StageResult:
    dataset: str
    checkpoint: Path
    loss_rows: list
    metric_rows: list


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from a tuple of ints/strings (process-independent)."""
    tokens = [
        zlib.crc32(p.encode()) if isinstance(p, str) else int(p) % (2**31)
        for p in parts
    ]
    return int(np.random.SeedSequence(tokens).generate_state(1)[0])


def _to_batch(pairs, indices) -> tuple:
    images = np.stack([pairs[i][0] for i in indices])[:, None]
    masks = np.stack([pairs[i][1] for i in indices])[:, None]
    return (
        torch.from_numpy(images.astype(np.float32)),
        torch.from_numpy(masks.astype(np.float32)),
    )


def train_stage(model, train_pairs, cfg: TrainConfig, stage_name: str, val_pairs=None):
    """Train in place; returns per-epoch loss rows (epoch, stage, train, val).

    Gradients accumulate over up to ``cfg.accumulation`` micro-batches
    before each optimizer step; a shorter window at the end of an epoch
    still steps, so every epoch sees at least one update.  ``val_pairs``
    defaults to an unaugmented eval-mode pass over the training slices -
    it is logged for curve shape only, nothing consumes it.

    The model runs in train mode, so when fine-tuning a checkpoint from an
    earlier stage the batch-normalization statistics are re-estimated on
    this stage's data rather than frozen.
    """
    from .losses import LossConfig, mss_loss

    cfg.validate()
    if not train_pairs:
        raise ManifestError(f"stage {stage_name!r} has no training slices")
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(derive_seed(cfg.seed, stage_name, "torch"))
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed % (2**31), derive_seed(stage_name)])
    )
    loss_cfg = LossConfig()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    eval_pairs = val_pairs if val_pairs else train_pairs

    rows = []
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_pairs))
        batches = [
            order[i : i + cfg.micro_batch]
            for i in range(0, len(order), cfg.micro_batch)
        ]
        epoch_loss = 0.0
        cursor = 0
        while cursor < len(batches):
            window = batches[cursor : cursor + cfg.accumulation]
            optimizer.zero_grad()
            for indices in window:
                aug = [
                    augment(*train_pairs[i][:2], cfg.augmentation, rng)
                    for i in indices
                ]
                images = torch.from_numpy(np.stack([a[0] for a in aug])[:, None])
                masks = torch.from_numpy(
                    np.stack([a[1] for a in aug])[:, None].astype(np.float32)
                )
                loss = mss_loss(model(images), masks, loss_cfg) / len(window)
                loss.backward()
                epoch_loss += float(loss.detach()) * len(window)
            optimizer.step()
            cursor += len(window)
        train_loss = epoch_loss / len(batches)

        model.eval()
        with torch.no_grad():
            val_losses = []
            for i in range(0, len(eval_pairs), cfg.micro_batch):
                images, masks = _to_batch(
                    eval_pairs, range(i, min(i + cfg.micro_batch, len(eval_pairs)))
                )
                val_losses.append(float(mss_loss(model(images), masks, loss_cfg)))
            val_loss = float(np.mean(val_losses))
        rows.append([epoch, stage_name, f"{train_loss:.6f}", f"{val_loss:.6f}"])
    return rows


def predict_mask(model, image: np.ndarray) -> np.ndarray:
    """Full-resolution head, thresholded at 0.5, as a uint8 mask."""
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.asarray(image, dtype=np.float32)[None, None])
        prob = model(x)[0][0, 0].numpy()
    return (prob >= THRESHOLD).astype(np.uint8)


def export_masks(model, manifest: Manifest, entries, out_dir) -> list:
    """Segment each entry and write ``out_dir/<entry rel path>`` as uint8 TSR.

    Names mirror the manifest, so a prediction tree lines up file-for-file
    with the suite it was computed from.  Returns (entry, path) pairs.
    """
    from .data import normalize_slice

    out_root = Path(out_dir)
    written = []
    for entry in entries:
        image = normalize_slice(tsrio.read_tensor(manifest.path(entry["image"])))
        pred = predict_mask(model, image)
        path = out_root / entry["image"]
        path.parent.mkdir(parents=True, exist_ok=True)
        tsrio.write_tensor(path, pred)
        written.append((entry, path))
    return written


def score_masks(written, manifest: Manifest, stage_name: str, perfrec: str = "perfrec"):
    """Score exported masks with the toolkit's ``eval`` command.

    Postprocessing (largest connected component) is applied on the toolkit
    side, matching the reference evaluation pipeline.
    """
    rows = []
    for entry, pred_path in written:
        proc = subprocess.run(
            [
                perfrec,
                "eval",
                "--pred",
                str(pred_path),
                "--gt",
                str(manifest.path(entry["mask"])),
                "--postprocess",
            ],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise TurboliftError(
                f"{perfrec} eval failed on {pred_path}: {proc.stderr.strip()}"
            )
        lines = proc.stdout.strip().splitlines()
        header = lines[0].split(",")
        values = lines[1].split(",")
        record = dict(zip(header, values))
        rows.append(
            [
                stage_name,
                entry["subject"],
                entry["modality"],
                entry["image"],
                str(bool(entry.get("test_only", False))).lower(),
            ]
            + [record[m] for m in ("dice", "iou", "precision", "sensitivity", "specificity")]
        )
    return rows


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def run_stage(
    dataset: str,
    model,
    spec: ModelSpec,
    cfg: TrainConfig,
    suite: Manifest,
    fold: dict,
    out_dir,
    lineage,
    pretrain: Manifest = None,
    perfrec: str = "perfrec",
) -> StageResult:
    """Train one stage and emit its artifacts under ``out_dir``:

        checkpoint.pt / checkpoint.json   weights + lineage sidecar
        loss.csv                          per-epoch train/val loss
        masks/<subject>/<modality>/*.tsr  thresholded test segmentations
        metrics.csv                       per-slice scores from the toolkit

    ``fold`` supplies the subject split; for the synthetic pretraining
    stage the split comes from the pretraining manifest's holdout fold.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if dataset == "pretrain_synth":
        if pretrain is None:
            raise ManifestError("pretrain_synth stage needs a pretraining manifest")
        source = pretrain
        split = pretrain.fold("holdout", 0)
    else:
        source = suite
        split = fold
    train_pairs = load_pairs(source, dataset, split["train"], include_test_only=False)
    loss_rows = train_stage(model, train_pairs, cfg, dataset)
    write_csv(out / "loss.csv", LOSS_HEADER, loss_rows)

    test_entries = source.select(dataset, split["test"], include_test_only=True)
    written = export_masks(model, source, test_entries, out / "masks")
    metric_rows = score_masks(written, source, dataset, perfrec)
    write_csv(out / "metrics.csv", METRIC_HEADER, metric_rows)

    new_lineage = tuple(lineage) + (dataset,)
    ckpt = save_checkpoint(out / "checkpoint", model, spec, new_lineage, cfg.seed)
    return StageResult(dataset, ckpt, loss_rows, metric_rows)
