"""Dataset manifest: the JSON index a generated suite ships with.

The trainer never touches the generator's internals; everything it knows
about a dataset comes from this file plus the TSR tensors it points at.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError

MODALITIES = ("pretrain_synth", "ct", "cbct", "cbct_tst")


@dataclass(frozen=True)
class Manifest:
    """Parsed manifest with path resolution relative to its own location."""

    root: Path
    subjects: list
    entries: list  # of dict(subject, modality, image, mask, test_only)
    folds: dict  # scheme -> list of dict(fold, train, test)

    def select(
        self,
        modality: str,
        subjects=None,
        include_test_only: bool = True,
    ) -> list:
        """Entries of one modality, optionally restricted to given subjects."""
        out = [e for e in self.entries if e["modality"] == modality]
        if subjects is not None:
            wanted = set(subjects)
            out = [e for e in out if e["subject"] in wanted]
        if not include_test_only:
            out = [e for e in out if not e.get("test_only", False)]
        # deterministic order regardless of manifest file ordering
        return sorted(out, key=lambda e: (e["subject"], e["image"]))

    def fold(self, scheme: str, index: int) -> dict:
        if scheme not in self.folds:
            raise ManifestError(
                f"no fold scheme {scheme!r}; have {sorted(self.folds)}"
            )
        folds = self.folds[scheme]
        if not 0 <= index < len(folds):
            raise ManifestError(
                f"fold {index} out of range for {scheme!r} ({len(folds)} folds)"
            )
        return folds[index]

    def path(self, rel: str) -> Path:
        return self.root / rel


def load_manifest(path) -> Manifest:
    """Load ``manifest.json`` from a suite directory or an explicit file path."""
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.is_file():
        raise ManifestError(f"no manifest at {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{p}: invalid JSON ({exc})") from exc
    for key in ("subjects", "entries", "folds"):
        if key not in doc:
            raise ManifestError(f"{p}: missing key {key!r}")
    for e in doc["entries"]:
        for key in ("subject", "modality", "image", "mask"):
            if key not in e:
                raise ManifestError(f"{p}: entry missing key {key!r}: {e}")
    return Manifest(
        root=p.parent,
        subjects=list(doc["subjects"]),
        entries=list(doc["entries"]),
        folds=dict(doc["folds"]),
    )


def save_manifest(manifest_doc: dict, path) -> None:
    """Write a manifest document as stable, sorted JSON."""
    with open(path, "w") as fh:
        json.dump(manifest_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
