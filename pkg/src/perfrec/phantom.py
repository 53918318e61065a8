"""Seeded dynamic 2D liver phantoms with per-tissue time-attenuation curves.

A phantom is a label map plus one time-attenuation curve (TAC) per tissue
label.  The liver is a wobbled ellipse containing vessels, an optional
embolised (hypoperfused, flat-TAC) region, an optional gallbladder carve-out,
and an optional high-attenuation metal-like insert standing in for
embolisation material.  All randomness flows through a single seeded
generator so a (config, seed) pair reproduces the phantom bit-exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, DomainError
from . import tensorio


class Tissue(enum.IntEnum):
    """Label ids; background is fixed at 0."""

    BACKGROUND = 0
    LIVER = 1
    VESSEL = 2
    GALLBLADDER = 3
    EMBOLISED = 4
    METAL_INSERT = 5


# labels counted as "liver" in segmentation ground truth: the organ with its
# vessels and embolised tissue, but not the gallbladder
LIVER_ORGAN_LABELS = (
    Tissue.LIVER,
    Tissue.VESSEL,
    Tissue.EMBOLISED,
    Tissue.METAL_INSERT,
)


class TACModel(str, enum.Enum):
    CONSTANT = "constant"
    GAMMA_VARIATE = "gamma_variate"


@dataclass(frozen=True)
class TAC:
    """Time-attenuation curve of one tissue.

    The gamma-variate bolus shape is peak-normalized:
    ``g(tau; k) = (tau/(k-1))**(k-1) * exp((k-1) - tau)`` with
    ``tau = (t - arrival_time) / scale_theta``, so the curve peaks at
    ``arrival_time + (k-1)*scale_theta`` with value ``baseline + amplitude``.
    The constant model ignores everything except ``baseline``.
    """

    model: TACModel
    baseline: float
    amplitude: float = 0.0
    arrival_time: float = 0.0
    shape_k: float = 2.0
    scale_theta: float = 1.0

    def __post_init__(self):
        if self.baseline < 0:
            raise ConfigurationError(f"baseline must be >= 0, got {self.baseline}")
        if self.model is TACModel.GAMMA_VARIATE:
            if self.shape_k <= 1.0:
                raise ConfigurationError(
                    f"gamma-variate shape_k must be > 1, got {self.shape_k}"
                )
            if self.scale_theta <= 0.0:
                raise ConfigurationError(
                    f"gamma-variate scale_theta must be > 0, got {self.scale_theta}"
                )


def eval_tac(tac: TAC, t):
    """Evaluate a TAC at time(s) ``t`` (seconds, >= 0)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("t must be >= 0")
    if tac.model is TACModel.CONSTANT:
        out = np.full_like(t_arr, tac.baseline)
    else:
        tau = (t_arr - tac.arrival_time) / tac.scale_theta
        km1 = tac.shape_k - 1.0
        with np.errstate(invalid="ignore"):
            g = np.where(tau > 0, (tau / km1) ** km1 * np.exp(km1 - tau), 0.0)
        out = tac.baseline + tac.amplitude * g
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class PhantomConfig:
    """Geometry and kinetics ranges for one phantom draw.

    Lengths are in pixels unless suffixed ``_frac`` (fraction of the grid);
    times are in seconds; attenuation is unitless grid attenuation.
    Ranges ``(lo, hi)`` are sampled uniformly with the phantom seed.
    """

    height: int = 96
    width: int = 96
    pixel_spacing: float = 1.0
    liver_center_frac: tuple = (0.5, 0.5)
    liver_semiaxes_frac: tuple = (0.30, 0.36)
    liver_wobble: float = 0.08
    vessel_count: int = 3
    vessel_width: float = 2.0
    gallbladder: bool = True
    embolised_fraction: float = 0.15
    metal_insert: bool = False
    metal_radius: float = 2.0
    metal_attenuation_scale: float = 50.0
    background_attenuation: float = 0.05
    liver_baseline: tuple = (0.18, 0.22)
    liver_amplitude: tuple = (0.10, 0.16)
    liver_arrival: tuple = (7.0, 10.0)
    liver_shape: tuple = (2.4, 3.4)
    liver_scale: tuple = (4.0, 6.0)
    vessel_amplitude: tuple = (0.30, 0.45)
    vessel_arrival: tuple = (4.5, 6.5)
    vessel_shape: tuple = (2.0, 2.8)
    vessel_scale: tuple = (2.5, 4.0)
    seed: int = 0

    def validate(self):
        if self.height < 16 or self.width < 16:
            raise ConfigurationError(
                f"grid must be at least 16x16, got {self.height}x{self.width}"
            )
        if not (0.0 <= self.embolised_fraction <= 1.0):
            raise ConfigurationError(
                f"embolised_fraction must be in [0, 1], got {self.embolised_fraction}"
            )
        if self.vessel_count < 0 or self.vessel_width <= 0:
            raise ConfigurationError("vessel_count >= 0 and vessel_width > 0 required")
        if not (0.0 <= self.liver_wobble < 0.3):
            raise ConfigurationError("liver_wobble must be in [0, 0.3)")
        cy = self.liver_center_frac[0] * (self.height - 1)
        cx = self.liver_center_frac[1] * (self.width - 1)
        ry = self.liver_semiaxes_frac[0] * self.height * (1.0 + self.liver_wobble)
        rx = self.liver_semiaxes_frac[1] * self.width * (1.0 + self.liver_wobble)
        if (
            cy - ry < 1
            or cy + ry > self.height - 2
            or cx - rx < 1
            or cx + rx > self.width - 2
        ):
            raise ConfigurationError("liver ellipse does not fit inside the grid")
        for name in (
            "liver_baseline",
            "liver_amplitude",
            "liver_arrival",
            "liver_shape",
            "liver_scale",
            "vessel_amplitude",
            "vessel_arrival",
            "vessel_shape",
            "vessel_scale",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} range ({lo}, {hi}) has lo > hi")
        if self.liver_shape[0] <= 1.0 or self.vessel_shape[0] <= 1.0:
            raise ConfigurationError("gamma shape ranges must stay > 1")
        if self.liver_scale[0] <= 0.0 or self.vessel_scale[0] <= 0.0:
            raise ConfigurationError("gamma scale ranges must stay > 0")


@dataclass(frozen=True)
class DynamicPhantom:
    """Label map plus the TAC assigned to each present label."""

    labels: np.ndarray  # (H, W) uint8
    tacs: dict  # label id -> TAC
    pixel_spacing: float
    seed: int

    def __post_init__(self):
        present = set(np.unique(self.labels).tolist())
        missing = present - set(int(k) for k in self.tacs)
        if missing:
            raise ConfigurationError(f"labels without a TAC: {sorted(missing)}")

    @property
    def shape(self):
        return self.labels.shape

    def liver_mask(self) -> np.ndarray:
        """Ground-truth liver mask: organ with vessels and embolised tissue,
        gallbladder excluded."""
        return np.isin(self.labels, [int(l) for l in LIVER_ORGAN_LABELS]).astype(
            np.uint8
        )


def sample_volume(phantom: DynamicPhantom, t: float) -> np.ndarray:
    """Attenuation image of the phantom at time ``t`` (one value per label)."""
    if t < 0:
        raise DomainError("t must be >= 0")
    lut = np.zeros(int(max(phantom.tacs)) + 1, dtype=float)
    for label_id, tac in phantom.tacs.items():
        lut[int(label_id)] = eval_tac(tac, float(t))
    return lut[phantom.labels]


def _liver_boundary(config: PhantomConfig, rng: np.random.Generator):
    """Sample the wobbled-ellipse boundary; returns (cy, cx, ry, rx, amps, phases)."""
    cy = config.liver_center_frac[0] * (config.height - 1)
    cx = config.liver_center_frac[1] * (config.width - 1)
    ry = config.liver_semiaxes_frac[0] * config.height
    rx = config.liver_semiaxes_frac[1] * config.width
    raw = rng.uniform(0.2, 1.0, size=3)
    amps = config.liver_wobble * raw / raw.sum() if config.liver_wobble > 0 else raw * 0
    phases = rng.uniform(0.0, 2.0 * math.pi, size=3)
    return cy, cx, ry, rx, amps, phases


def _radial_limit(phi, amps, phases):
    """Normalized boundary radius at polar angle(s) phi (modes 2..4)."""
    r = np.ones_like(phi)
    for m, (a, d) in enumerate(zip(amps, phases), start=2):
        r = r + a * np.cos(m * phi + d)
    return r


def _rasterize_liver(config, cy, cx, ry, rx, amps, phases) -> np.ndarray:
    ii, jj = np.mgrid[0 : config.height, 0 : config.width]
    dy = (ii - cy) / ry
    dx = (jj - cx) / rx
    rho = np.hypot(dy, dx)
    phi = np.arctan2(dy, dx)
    return rho <= _radial_limit(phi, amps, phases)


def _carve_gallbladder(labels, config, cy, cx, ry, rx, amps, phases, rng):
    # small ellipse biting into the lower liver boundary, fully inside the
    # liver footprint so it can never poke out of the grid
    phi_gb = rng.uniform(math.pi / 3.0, 2.0 * math.pi / 3.0)
    size = rng.uniform(0.10, 0.14) * min(ry, rx)
    ratio = rng.uniform(1.0, 1.4)
    boundary = float(_radial_limit(np.asarray(phi_gb), amps, phases))
    reach = boundary - 1.1 * size * ratio / min(ry, rx)
    gy = cy + reach * ry * math.sin(phi_gb)
    gx = cx + reach * rx * math.cos(phi_gb)
    tilt = rng.uniform(0.0, math.pi)
    ii, jj = np.mgrid[0 : labels.shape[0], 0 : labels.shape[1]]
    u = (ii - gy) * math.cos(tilt) - (jj - gx) * math.sin(tilt)
    v = (ii - gy) * math.sin(tilt) + (jj - gx) * math.cos(tilt)
    inside = (u / (size * ratio)) ** 2 + (v / size) ** 2 <= 1.0
    labels[inside & (labels == Tissue.LIVER)] = Tissue.GALLBLADDER


def _draw_vessels(labels, config, cy, cx, ry, rx, rng):
    h, w = labels.shape
    half = config.vessel_width / 2.0
    ii, jj = np.mgrid[0:h, 0:w]
    for _ in range(config.vessel_count):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        rad = rng.uniform(0.0, 0.35)
        py = cy + rad * ry * math.sin(ang)
        px = cx + rad * rx * math.cos(ang)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        n_steps = int(1.2 * min(ry, rx))
        for _ in range(n_steps):
            yi, xi = int(round(py)), int(round(px))
            if not (0 <= yi < h and 0 <= xi < w) or labels[yi, xi] not in (
                Tissue.LIVER,
                Tissue.VESSEL,
            ):
                break
            stamp = (ii - py) ** 2 + (jj - px) ** 2 <= half**2
            labels[stamp & (labels == Tissue.LIVER)] = Tissue.VESSEL
            heading += rng.uniform(-0.35, 0.35)
            py += 1.4 * math.sin(heading)
            px += 1.4 * math.cos(heading)


def _grow_embolised(labels, fraction, rng):
    organ = (labels == Tissue.LIVER) | (labels == Tissue.VESSEL)
    n_organ = int(organ.sum())
    target = int(round(fraction * n_organ))
    if target == 0:
        return
    h, w = labels.shape
    seeds_i, seeds_j = np.nonzero(organ)
    pick = rng.integers(len(seeds_i))
    frontier = [(int(seeds_i[pick]), int(seeds_j[pick]))]
    taken = np.zeros_like(organ)
    grown = 0
    while frontier and grown < target:
        k = int(rng.integers(len(frontier)))
        frontier[k], frontier[-1] = frontier[-1], frontier[k]
        i, j = frontier.pop()
        if taken[i, j] or not organ[i, j]:
            continue
        taken[i, j] = True
        grown += 1
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w and organ[ni, nj] and not taken[ni, nj]:
                frontier.append((ni, nj))
    labels[taken] = Tissue.EMBOLISED


def _stamp_metal(labels, config):
    # deterministic placement (centroid of the embolised region, else organ
    # centroid) so the insert is the only difference vs. the clean phantom
    emb = labels == Tissue.EMBOLISED
    region = emb if emb.any() else np.isin(labels, [int(Tissue.LIVER), int(Tissue.VESSEL)])
    ci, cj = (float(x.mean()) for x in np.nonzero(region))
    ii, jj = np.mgrid[0 : labels.shape[0], 0 : labels.shape[1]]
    disc = (ii - ci) ** 2 + (jj - cj) ** 2 <= config.metal_radius**2
    allowed = np.isin(
        labels, [int(Tissue.LIVER), int(Tissue.VESSEL), int(Tissue.EMBOLISED)]
    )
    labels[disc & allowed] = Tissue.METAL_INSERT


def _sample_tacs(config: PhantomConfig, rng: np.random.Generator) -> dict:
    b = rng.uniform(*config.liver_baseline)
    liver = TAC(
        TACModel.GAMMA_VARIATE,
        baseline=b,
        amplitude=rng.uniform(*config.liver_amplitude),
        arrival_time=rng.uniform(*config.liver_arrival),
        shape_k=rng.uniform(*config.liver_shape),
        scale_theta=rng.uniform(*config.liver_scale),
    )
    vessel = TAC(
        TACModel.GAMMA_VARIATE,
        baseline=b,
        amplitude=rng.uniform(*config.vessel_amplitude),
        arrival_time=rng.uniform(*config.vessel_arrival),
        shape_k=rng.uniform(*config.vessel_shape),
        scale_theta=rng.uniform(*config.vessel_scale),
    )
    return {
        int(Tissue.BACKGROUND): TAC(TACModel.CONSTANT, config.background_attenuation),
        int(Tissue.LIVER): liver,
        int(Tissue.VESSEL): vessel,
        int(Tissue.GALLBLADDER): TAC(TACModel.CONSTANT, 0.6 * b),
        int(Tissue.EMBOLISED): TAC(TACModel.CONSTANT, b),
        int(Tissue.METAL_INSERT): TAC(
            TACModel.CONSTANT, config.metal_attenuation_scale * b
        ),
    }


def build_phantom(config: PhantomConfig) -> DynamicPhantom:
    """Rasterize a phantom from ``config`` (deterministic for a fixed seed)."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))

    cy, cx, ry, rx, amps, phases = _liver_boundary(config, rng)
    labels = np.zeros((config.height, config.width), dtype=np.uint8)
    labels[_rasterize_liver(config, cy, cx, ry, rx, amps, phases)] = Tissue.LIVER
    if config.gallbladder:
        _carve_gallbladder(labels, config, cy, cx, ry, rx, amps, phases, rng)
    if config.vessel_count > 0:
        _draw_vessels(labels, config, cy, cx, ry, rx, rng)
    if config.embolised_fraction > 0:
        _grow_embolised(labels, config.embolised_fraction, rng)

    tacs = _sample_tacs(config, rng)
    # everything after this point must not draw from rng, so that enabling the
    # insert changes nothing else in the phantom
    if config.metal_insert:
        _stamp_metal(labels, config)

    present = set(np.unique(labels).tolist())
    tacs = {k: v for k, v in tacs.items() if k in present}
    if Tissue.LIVER not in present:
        raise ConfigurationError("degenerate config: no liver pixels rasterized")

    phantom = DynamicPhantom(
        labels=labels, tacs=tacs, pixel_spacing=config.pixel_spacing, seed=config.seed
    )
    if _component_count(phantom.liver_mask()) != 1:
        raise ConfigurationError(
            "liver mask is not a single connected component; adjust geometry config"
        )
    return phantom


def _component_count(mask: np.ndarray) -> int:
    from scipy import ndimage

    _, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    return int(n)


def save_phantom(phantom: DynamicPhantom, out_dir) -> None:
    """Write label map (TSR uint8) and the per-label TAC table (JSON)."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "labels.tsr", phantom.labels.astype(np.uint8))
    table = {
        str(label_id): {**asdict(tac), "model": tac.model.value}
        for label_id, tac in phantom.tacs.items()
    }
    tensorio.write_json(
        out / "tacs.json",
        {
            "pixel_spacing": phantom.pixel_spacing,
            "seed": phantom.seed,
            "tacs": table,
            "label_names": {str(int(t)): t.name.lower() for t in Tissue},
        },
    )


def load_phantom(in_dir) -> DynamicPhantom:
    from pathlib import Path

    src = Path(in_dir)
    labels = tensorio.read_tensor(src / "labels.tsr")
    meta = tensorio.read_json(src / "tacs.json")
    tacs = {}
    for key, fields in meta["tacs"].items():
        fields = dict(fields)
        fields["model"] = TACModel(fields["model"])
        tacs[int(key)] = TAC(**fields)
    return DynamicPhantom(
        labels=labels,
        tacs=tacs,
        pixel_spacing=float(meta["pixel_spacing"]),
        seed=int(meta["seed"]),
    )
