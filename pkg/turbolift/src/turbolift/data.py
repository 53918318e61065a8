"""Slice loading, input normalization, and the synthetic pretraining set.

Reconstructed slices arrive on wildly different intensity scales (per-sweep
attenuation maps vs. first-coefficient images), so every slice is rescaled
by its own 99th percentile before it reaches the network.  The pretraining
set is a deliberately different image family - soft elliptical "organs" on
blobby backgrounds, no contrast dynamics - standing in for an unrelated
public segmentation corpus.
"""

from __future__ import annotations

import numpy as np

from pathlib import Path

from . import tsrio
from .errors import ConfigurationError, ManifestError
from .manifest import Manifest, load_manifest, save_manifest


def normalize_slice(image: np.ndarray) -> np.ndarray:
    """Rescale one slice by its 99th percentile, clipped to [0, 2]."""
    img = np.asarray(image, dtype=np.float32)
    scale = float(np.percentile(img, 99.0))
    if scale <= 1e-12:
        scale = float(np.abs(img).max())
    if scale <= 1e-12:
        return np.zeros_like(img)
    return np.clip(img / scale, 0.0, 2.0).astype(np.float32)


def load_pairs(
    manifest: Manifest,
    modality: str,
    subjects=None,
    include_test_only: bool = True,
) -> list:
    """Load (normalized image, binary mask, entry) triples for a modality."""
    pairs = []
    for entry in manifest.select(modality, subjects, include_test_only):
        image = tsrio.read_tensor(manifest.path(entry["image"]))
        mask = tsrio.read_tensor(manifest.path(entry["mask"]))
        if image.shape != mask.shape:
            raise ManifestError(
                f"{entry['image']}: image {image.shape} != mask {mask.shape}"
            )
        pairs.append((normalize_slice(image), (mask > 0).astype(np.uint8), entry))
    return pairs


def _soft_ellipse(height: int, width: int, rng: np.random.Generator):
    """A rotated super-ellipse with a smooth rim; returns (field, mask)."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy = rng.uniform(0.35, 0.65) * height
    cx = rng.uniform(0.35, 0.65) * width
    ry = rng.uniform(0.16, 0.30) * height
    rx = rng.uniform(0.16, 0.30) * width
    theta = rng.uniform(0.0, np.pi)
    power = rng.uniform(1.6, 2.6)
    u = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
    v = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
    r = (np.abs(u / ry) ** power + np.abs(v / rx) ** power) ** (1.0 / power)
    rim = 0.08 + 0.04 * rng.random()
    field = 1.0 / (1.0 + np.exp((r - 1.0) / rim))
    return field, (r <= 1.0).astype(np.uint8)


def _synth_slice(height: int, width: int, rng: np.random.Generator):
    """One pretraining image/mask pair in [0, ~1.3] intensity."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    image = rng.uniform(0.05, 0.15) * np.ones((height, width))
    # slowly varying background plus a few soft distractor blobs
    image += 0.1 * rng.random() * (yy / height) + 0.1 * rng.random() * (xx / width)
    for _ in range(rng.integers(2, 5)):
        by = rng.uniform(0, height)
        bx = rng.uniform(0, width)
        br = rng.uniform(0.05, 0.18) * min(height, width)
        amp = rng.uniform(0.08, 0.3)
        image += amp * np.exp(-(((yy - by) ** 2 + (xx - bx) ** 2) / (2 * br**2)))
    organ, mask = _soft_ellipse(height, width, rng)
    image += rng.uniform(0.45, 0.7) * organ
    image += rng.normal(0.0, rng.uniform(0.01, 0.04), size=image.shape)
    return image.astype(np.float32), mask


def generate_pretrain_dataset(
    out_dir,
    n_subjects: int = 10,
    slices_per_subject: int = 4,
    height: int = 64,
    width: int = 64,
    seed: int = 0,
    holdout: int = 2,
) -> Manifest:
    """Write a synthetic pretraining suite (images, masks, manifest.json).

    The last ``holdout`` subjects form the test side of a single "holdout"
    fold; the rest are training subjects.  Fully deterministic in ``seed``.
    """
    if n_subjects < holdout + 1:
        raise ConfigurationError(
            f"need more than holdout={holdout} subjects, got {n_subjects}"
        )
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    subjects = [f"p{i:02d}" for i in range(n_subjects)]
    entries = []
    for idx, subject in enumerate(subjects):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        for k in range(slices_per_subject):
            image, mask = _synth_slice(height, width, rng)
            rel = f"{subject}/pretrain_synth/{k}.tsr"
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            tsrio.write_tensor(path, image)
            tsrio.write_tensor(path.with_name(f"{k}.mask.tsr"), mask)
            entries.append(
                {
                    "subject": subject,
                    "modality": "pretrain_synth",
                    "image": rel,
                    "mask": rel.replace(".tsr", ".mask.tsr"),
                    "test_only": False,
                }
            )
    folds = {
        "holdout": [
            {
                "fold": 0,
                "train": subjects[: n_subjects - holdout],
                "test": subjects[n_subjects - holdout :],
            }
        ]
    }
    save_manifest(
        {
            "subjects": subjects,
            "entries": entries,
            "folds": folds,
            "config": {
                "n_subjects": n_subjects,
                "slices_per_subject": slices_per_subject,
                "height": height,
                "width": width,
            },
            "seed": seed,
        },
        root / "manifest.json",
    )
    return load_manifest(root)
