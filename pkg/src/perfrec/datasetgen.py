"""Synthetic dataset suite: per-subject CT-like, CBCT-like and TST images
with ground-truth liver masks, subject-exclusive folds, and artefact slices.

Per subject the pipeline simulates one phantom and emits, on a shared grid:

* ``ct``       - dense-angle, low-noise static reconstructions at several
                 bolus phases (the largest, easiest dataset),
* ``cbct``     - straightforward per-sweep reconstructions with higher noise
                 and optional detector truncation,
* ``cbct_tst`` - first-coefficient images of the time separation pipeline,
                 one per configured basis source.

Default counts per subject are 5:4:2, so dataset sizes order ct >= cbct >=
cbct_tst.  Every image has a sibling ``.mask.tsr`` with the liver organ mask
(vessels and embolised tissue included, gallbladder excluded).  Everything is
derived from the master seed; regenerating a suite is byte-identical.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import tensorio
from .errors import ConfigurationError, InputError
from .phantom import PhantomConfig, build_phantom, eval_tac, sample_volume, TAC, TACModel
from .projector import Geometry, make_protocol, project_dynamic, forward_project
from .recon import ReconConfig, reconstruct_static, reconstruct_sweeps
from .tst import first_coeff_image, harmonic_basis, svd_basis, tst_reconstruct

MODALITIES = ("ct", "cbct", "cbct_tst")
FOLD_SCHEMES = ("leave_one_out", "leave_two_out")


@dataclass(frozen=True)
class SuiteConfig:
    n_subjects: int = 4
    height: int = 64
    width: int = 64
    # acquisition
    n_sweeps: int = 6
    arc_degrees: float = 200.0
    angular_step: float = 6.0
    sweep_duration: float = 4.3
    pause_duration: float = 1.0
    # per-modality imaging
    ct_phases: int = 5
    ct_angles: int = 120
    ct_noise: float = 0.002
    cbct_count: int = 4
    cbct_noise: float = 0.02
    cbct_truncation: float | None = None
    basis: str = "both"  # "harmonic" | "svd" | "both"
    recon_iters: int = 40
    # folds / extras
    fold_scheme: str = "leave_one_out"
    inject_artifacts: bool = True
    master_seed: int = 0

    def validate(self):
        if self.n_subjects < 2:
            raise ConfigurationError("n_subjects must be >= 2")
        if self.fold_scheme not in FOLD_SCHEMES:
            raise ConfigurationError(f"unknown fold_scheme {self.fold_scheme!r}")
        if self.fold_scheme == "leave_two_out" and self.n_subjects < 3:
            raise ConfigurationError("leave_two_out requires n_subjects >= 3")
        if self.basis not in ("harmonic", "svd", "both"):
            raise ConfigurationError(f"unknown basis choice {self.basis!r}")
        if self.cbct_noise <= self.ct_noise:
            raise ConfigurationError(
                "cbct_noise must exceed ct_noise (modality contrast contract)"
            )
        if self.n_sweeps < 5:
            raise ConfigurationError("n_sweeps must be >= 5 (basis fit needs R >= N)")
        if self.cbct_count > self.n_sweeps:
            raise ConfigurationError("cbct_count cannot exceed n_sweeps")

    def basis_sources(self):
        return ("harmonic", "svd") if self.basis == "both" else (self.basis,)


def _subject_rng(master_seed: int, subject: int, stream: int) -> np.random.Generator:
    seq = np.random.SeedSequence([int(master_seed), int(subject), int(stream)])
    return np.random.Generator(np.random.PCG64(seq))


def _subject_phantom_config(config: SuiteConfig, subject: int) -> PhantomConfig:
    """Per-subject shape variation drawn from the master seed."""
    rng = _subject_rng(config.master_seed, subject, 0)
    return PhantomConfig(
        height=config.height,
        width=config.width,
        liver_center_frac=(rng.uniform(0.46, 0.54), rng.uniform(0.46, 0.54)),
        liver_semiaxes_frac=(rng.uniform(0.26, 0.32), rng.uniform(0.32, 0.38)),
        liver_wobble=rng.uniform(0.04, 0.10),
        vessel_count=int(rng.integers(2, 5)),
        embolised_fraction=rng.uniform(0.08, 0.18),
        seed=int(rng.integers(2**31)),
    )


def make_tac_library(
    config: SuiteConfig, time_grid: np.ndarray, n_curves: int = 64, seed: int = 0
) -> np.ndarray:
    """Prior-knowledge TAC library for the SVD basis: constants plus
    gamma-variate curves spanning the phantom kinetics ranges."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    ranges = PhantomConfig()
    rows = []
    for _ in range(n_curves // 4):
        rows.append(np.full(time_grid.size, rng.uniform(*ranges.liver_baseline)))
    while len(rows) < n_curves:
        fast = rng.random() < 0.5
        tac = TAC(
            TACModel.GAMMA_VARIATE,
            baseline=rng.uniform(*ranges.liver_baseline),
            amplitude=rng.uniform(
                *(ranges.vessel_amplitude if fast else ranges.liver_amplitude)
            ),
            arrival_time=rng.uniform(
                *(ranges.vessel_arrival if fast else ranges.liver_arrival)
            ),
            shape_k=rng.uniform(*(ranges.vessel_shape if fast else ranges.liver_shape)),
            scale_theta=rng.uniform(
                *(ranges.vessel_scale if fast else ranges.liver_scale)
            ),
        )
        rows.append(eval_tac(tac, time_grid))
    return np.stack(rows)


def make_folds(subjects: list, scheme: str) -> list:
    """Subject-exclusive train/test splits."""
    if scheme == "leave_one_out":
        return [
            {"fold": i, "train": [s for s in subjects if s != t], "test": [t]}
            for i, t in enumerate(subjects)
        ]
    if scheme == "leave_two_out":
        folds = []
        for i, pair in enumerate(itertools.combinations(subjects, 2)):
            folds.append(
                {
                    "fold": i,
                    "train": [s for s in subjects if s not in pair],
                    "test": list(pair),
                }
            )
        return folds
    raise ConfigurationError(f"unknown fold scheme {scheme!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """Index of one generated suite; the interchange contract for trainers."""

    root: str
    entries: list  # of dict(subject, modality, image, mask, test_only)
    folds: dict  # scheme -> fold list
    subjects: list
    config: dict
    seed: int

    def modality_entries(self, modality: str, include_test_only: bool = True):
        out = [e for e in self.entries if e["modality"] == modality]
        if not include_test_only:
            out = [e for e in out if not e["test_only"]]
        return out


def save_manifest(manifest: DatasetManifest, path) -> None:
    tensorio.write_json(
        path,
        {
            "entries": manifest.entries,
            "folds": manifest.folds,
            "subjects": manifest.subjects,
            "config": manifest.config,
            "seed": manifest.seed,
        },
    )


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    d = tensorio.read_json(path)
    return DatasetManifest(
        root=str(path.parent),
        entries=d["entries"],
        folds=d["folds"],
        subjects=d["subjects"],
        config=d["config"],
        seed=int(d["seed"]),
    )


def _write_image(root: Path, rel: str, image: np.ndarray, mask: np.ndarray):
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(path, image.astype(np.float32))
    tensorio.write_tensor(
        path.with_name(path.name.replace(".tsr", ".mask.tsr")),
        mask.astype(np.uint8),
    )


def _subject_images(config: SuiteConfig, subject: int):
    """Generate all modality images for one subject; returns
    (phantom, dict modality -> list of images)."""
    phantom_cfg = _subject_phantom_config(config, subject)
    phantom = build_phantom(phantom_cfg)
    geometry = Geometry(config.height, config.width)
    protocol = make_protocol(
        config.n_sweeps,
        config.arc_degrees,
        config.angular_step,
        config.sweep_duration,
        config.pause_duration,
    )
    noise_rng = _subject_rng(config.master_seed, subject, 1)
    recon_cfg = ReconConfig(max_iters=config.recon_iters)

    # CT-like: dense angles, low noise, several bolus phases
    ct_angles = np.linspace(0.0, config.arc_degrees, config.ct_angles, endpoint=False)
    total = protocol.total_duration
    phases = np.linspace(0.35, 0.75, config.ct_phases) * total
    ct_images = []
    for t in phases:
        rows = forward_project(sample_volume(phantom, float(t)), geometry, ct_angles)
        rows = rows + noise_rng.normal(0.0, config.ct_noise, size=rows.shape)
        ct_images.append(reconstruct_static(rows, ct_angles, geometry, recon_cfg).data)

    # CBCT-like: per-sweep straightforward reconstructions, noisier sinogram
    cbct_geom = Geometry(
        config.height, config.width, truncation=config.cbct_truncation
    )
    sino = project_dynamic(
        phantom,
        protocol,
        cbct_geom,
        noise_sigma=config.cbct_noise,
        seed=int(noise_rng.integers(2**31)),
    )
    sweep_vols = reconstruct_sweeps(sino, recon_cfg)
    keep = np.linspace(0, config.n_sweeps - 1, config.cbct_count).round().astype(int)
    cbct_images = [sweep_vols[i].data for i in keep]

    # CBCT-TST: first coefficient image per basis source
    grid = np.linspace(0.0, total, 256)
    tst_images = []
    for source in config.basis_sources():
        if source == "harmonic":
            basis = harmonic_basis(grid, total)
        else:
            library = make_tac_library(
                config, grid, seed=int(_subject_rng(config.master_seed, subject, 2).integers(2**31))
            )
            basis = svd_basis(library, grid, total, n=5)
        cv = tst_reconstruct(sino, basis, recon_cfg)
        tst_images.append(first_coeff_image(cv).data)

    return phantom, {"ct": ct_images, "cbct": cbct_images, "cbct_tst": tst_images}


def generate_suite(config: SuiteConfig, out_dir, workers: int = 1) -> DatasetManifest:
    """Generate the full suite under ``out_dir`` and write its manifest.

    Subjects are independent; ``workers > 1`` generates them in a thread
    pool.  Outputs are byte-identical regardless of worker count because
    every random stream is derived per subject from the master seed.
    """
    config.validate()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    subjects = [f"s{i:02d}" for i in range(config.n_subjects)]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda i: _subject_images(config, i), range(len(subjects))))
    else:
        results = [_subject_images(config, i) for i in range(len(subjects))]
    entries = []
    for idx, subject in enumerate(subjects):
        phantom, images = results[idx]
        mask = phantom.liver_mask()
        for modality, imgs in images.items():
            for i, img in enumerate(imgs):
                rel = f"{subject}/{modality}/{i}.tsr"
                _write_image(root, rel, img, mask)
                entries.append(
                    {
                        "subject": subject,
                        "modality": modality,
                        "image": rel,
                        "mask": rel.replace(".tsr", ".mask.tsr"),
                        "test_only": False,
                    }
                )

    folds = {"leave_one_out": make_folds(subjects, "leave_one_out")}
    if config.n_subjects >= 3:
        folds["leave_two_out"] = make_folds(subjects, "leave_two_out")

    manifest = DatasetManifest(
        root=str(root),
        entries=entries,
        folds=folds,
        subjects=subjects,
        config=asdict(config),
        seed=config.master_seed,
    )
    if config.inject_artifacts:
        manifest = inject_artifact_slices(manifest, config)
    save_manifest(manifest, root / "manifest.json")
    return manifest


def inject_artifact_slices(
    manifest: DatasetManifest, config: SuiteConfig
) -> DatasetManifest:
    """Add one test-only CBCT slice per subject from the same phantom with the
    high-attenuation insert enabled.

    The insert is stamped at a deterministic position without consuming
    random draws, so the label map (and therefore the mask) matches the clean
    subject exactly outside the insert and the liver mask is unchanged.
    """
    root = Path(manifest.root)
    entries = list(manifest.entries)
    for idx, subject in enumerate(manifest.subjects):
        phantom_cfg = _subject_phantom_config(config, idx)
        phantom_art = build_phantom(
            PhantomConfig(**{**asdict(phantom_cfg), "metal_insert": True})
        )
        geometry = Geometry(
            config.height, config.width, truncation=config.cbct_truncation
        )
        protocol = make_protocol(
            config.n_sweeps,
            config.arc_degrees,
            config.angular_step,
            config.sweep_duration,
            config.pause_duration,
        )
        noise_rng = _subject_rng(config.master_seed, idx, 3)
        sino = project_dynamic(
            phantom_art,
            protocol,
            geometry,
            noise_sigma=config.cbct_noise,
            seed=int(noise_rng.integers(2**31)),
        )
        data, angles = sino.sweep_rows(config.n_sweeps // 2)
        vol = reconstruct_static(
            data, angles, geometry, ReconConfig(max_iters=config.recon_iters)
        )
        index = len([e for e in entries if e["subject"] == subject and e["modality"] == "cbct"])
        rel = f"{subject}/cbct/{index}.tsr"
        _write_image(root, rel, vol.data, phantom_art.liver_mask())
        entries.append(
            {
                "subject": subject,
                "modality": "cbct",
                "image": rel,
                "mask": rel.replace(".tsr", ".mask.tsr"),
                "test_only": True,
            }
        )
    return DatasetManifest(
        root=manifest.root,
        entries=entries,
        folds=manifest.folds,
        subjects=manifest.subjects,
        config=manifest.config,
        seed=manifest.seed,
    )


def suite_config_from_dict(d: dict) -> SuiteConfig:
    known = set(SuiteConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise InputError(f"unknown suite config keys: {sorted(unknown)}")
    return SuiteConfig(**d)
