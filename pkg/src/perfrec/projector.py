"""2D parallel-beam projection operator and the timed multi-sweep schedule.

The line-integral operator uses Joseph's interpolating traversal: for each
detector ray the grid is marched along its dominant axis and the two
neighbouring pixel centres are weighted bilinearly, which makes the operator
linear, smooth under rotation, and exactly transposable.  Per-angle system
matrices are assembled once and cached as CSR, so the forward projection is a
stack of sparse matvecs and backprojection is the exact adjoint (transpose)
by construction.

Conventions: pixel (i, j) has centre ``x = (j - (W-1)/2) * pixel_spacing``,
``y = ((H-1)/2 - i) * pixel_spacing`` (row 0 on top); the ray family at angle
theta is ``{(x, y): x cos(theta) + y sin(theta) = u}`` with detector offset
``u_b = (b - (bins-1)/2) * detector_spacing``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, ShapeError
from .phantom import DynamicPhantom, eval_tac


@dataclass(frozen=True)
class Geometry:
    """Image grid and detector layout for the parallel-beam operator."""

    height: int
    width: int
    pixel_spacing: float = 1.0
    detector_bins: int = 0  # 0 -> auto: enough bins to cover the diagonal
    detector_spacing: float = 1.0
    truncation: float | None = None  # detector half-width kept (mm), None = full

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigurationError("image dimensions must be >= 1")
        if self.pixel_spacing <= 0 or self.detector_spacing <= 0:
            raise ConfigurationError("spacings must be > 0")
        if self.detector_bins == 0:
            diag = math.hypot(self.height, self.width) * self.pixel_spacing
            bins = int(math.ceil(diag / self.detector_spacing)) + 1
            object.__setattr__(self, "detector_bins", bins)
        if self.detector_bins < 1:
            raise ConfigurationError("detector_bins must be >= 1")
        if self.truncation is not None:
            diag = math.hypot(self.height, self.width) * self.pixel_spacing
            if not (0 < 2.0 * self.truncation < diag):
                raise ConfigurationError(
                    "truncated detector width must be positive and smaller "
                    "than the object diagonal"
                )

    def detector_offsets(self) -> np.ndarray:
        b = np.arange(self.detector_bins, dtype=float)
        return (b - (self.detector_bins - 1) / 2.0) * self.detector_spacing

    def active_bins(self) -> np.ndarray:
        """Boolean mask of bins kept after truncation."""
        if self.truncation is None:
            return np.ones(self.detector_bins, dtype=bool)
        return np.abs(self.detector_offsets()) <= self.truncation

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "pixel_spacing": self.pixel_spacing,
            "detector_bins": self.detector_bins,
            "detector_spacing": self.detector_spacing,
            "truncation": self.truncation,
        }

    @staticmethod
    def from_dict(d: dict) -> "Geometry":
        return Geometry(**d)


_matrix_cache: dict = {}


def clear_projector_cache() -> None:
    _matrix_cache.clear()


def system_matrix(geometry: Geometry, angle_deg: float) -> sparse.csr_matrix:
    """CSR system matrix (detector_bins x H*W) for one projection angle.

    Cached by (geometry, angle rounded to 1e-9 deg); truncated detector rows
    are identically zero so forward and adjoint agree on the truncation.
    """
    key = (geometry, round(float(angle_deg) % 360.0, 9))
    mat = _matrix_cache.get(key)
    if mat is not None:
        return mat

    h, w, ps = geometry.height, geometry.width, geometry.pixel_spacing
    theta = math.radians(key[1])
    c, s = math.cos(theta), math.sin(theta)
    u = geometry.detector_offsets()[:, None]  # (bins, 1)

    if abs(c) >= abs(s):
        # march along image rows: for each y, solve x from x c + y s = u
        y = (((h - 1) / 2.0) - np.arange(h, dtype=float)[None, :]) * ps
        col_f = ((u - y * s) / c) / ps + (w - 1) / 2.0  # (bins, h)
        drive = np.broadcast_to(np.arange(h)[None, :], col_f.shape)
        weight = ps / abs(c)
        n_other = w
        flat = lambda d, o: d * w + o  # noqa: E731 - (row, col) -> pixel index
    else:
        x = (np.arange(w, dtype=float)[None, :] - (w - 1) / 2.0) * ps
        row_f = (h - 1) / 2.0 - ((u - x * c) / s) / ps  # (bins, w)
        col_f = row_f
        drive = np.broadcast_to(np.arange(w)[None, :], col_f.shape)
        weight = ps / abs(s)
        n_other = h
        flat = lambda d, o: o * w + d  # noqa: E731

    lo = np.floor(col_f).astype(np.int64)
    fr = col_f - lo
    bins_idx = np.broadcast_to(
        np.arange(geometry.detector_bins)[:, None], col_f.shape
    )
    active = geometry.active_bins()[bins_idx]

    rows, cols, vals = [], [], []
    for off, frac in ((0, 1.0 - fr), (1, fr)):
        other = lo + off
        ok = (other >= 0) & (other < n_other) & (frac > 0) & active
        rows.append(bins_idx[ok])
        cols.append(flat(drive[ok], other[ok]))
        vals.append(frac[ok] * weight)
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geometry.detector_bins, h * w),
    )
    mat.sum_duplicates()
    _matrix_cache[key] = mat
    return mat


def stacked_matrix(geometry: Geometry, angles_deg) -> sparse.csr_matrix:
    """Vertically stacked system matrix for an angle list (cached)."""
    key = (geometry, tuple(round(float(a) % 360.0, 9) for a in angles_deg))
    mat = _matrix_cache.get(key)
    if mat is None:
        mat = sparse.vstack(
            [system_matrix(geometry, a) for a in angles_deg], format="csr"
        )
        _matrix_cache[key] = mat
    return mat


def forward_project(volume: np.ndarray, geometry: Geometry, angles_deg) -> np.ndarray:
    """Line integrals of ``volume`` at each angle; shape (n_angles, bins)."""
    volume = np.asarray(volume, dtype=float)
    if volume.shape != (geometry.height, geometry.width):
        raise ShapeError(
            f"volume shape {volume.shape} does not match geometry "
            f"{(geometry.height, geometry.width)}"
        )
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    out = np.empty((angles.size, geometry.detector_bins))
    flat = volume.ravel()
    for k, ang in enumerate(angles):
        out[k] = system_matrix(geometry, ang) @ flat
    return out


def back_project(rows: np.ndarray, geometry: Geometry, angles_deg) -> np.ndarray:
    """Exact adjoint of :func:`forward_project` (transposed matrices)."""
    rows = np.asarray(rows, dtype=float)
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape != (angles.size, geometry.detector_bins):
        raise ShapeError(
            f"rows shape {rows.shape} incompatible with {angles.size} angles x "
            f"{geometry.detector_bins} bins"
        )
    acc = np.zeros(geometry.height * geometry.width)
    for k, ang in enumerate(angles):
        acc += system_matrix(geometry, ang).T @ rows[k]
    return acc.reshape(geometry.height, geometry.width)


@dataclass(frozen=True)
class ScanProtocol:
    """Multi-sweep acquisition schedule.

    ``schedule`` holds one (sweep_index, angle_deg, timestamp_s) triple per
    projection; sweep k starts at ``k * (sweep_duration + pause_duration)``
    and odd sweeps run in descending angle order when ``alternate_direction``
    is set.
    """

    n_sweeps: int
    arc_degrees: float
    angular_step: float
    sweep_duration: float
    pause_duration: float
    alternate_direction: bool
    schedule: tuple  # of (sweep_index, angle_deg, timestamp_s)

    @property
    def angles_per_sweep(self) -> int:
        return len(self.schedule) // self.n_sweeps

    @property
    def total_duration(self) -> float:
        return self.schedule[-1][2]

    def sweep_entries(self, k: int):
        return [e for e in self.schedule if e[0] == k]

    def sweep_mid_times(self) -> np.ndarray:
        """Mid-acquisition time of each sweep (the nominal time of its
        straightforward reconstruction)."""
        starts = np.arange(self.n_sweeps) * (self.sweep_duration + self.pause_duration)
        return starts + self.sweep_duration / 2.0

    def angle_set(self) -> np.ndarray:
        """Sorted unique angles of one sweep (shared by all sweeps)."""
        return np.array(sorted({e[1] for e in self.schedule if e[0] == 0}))

    def to_dict(self) -> dict:
        return {
            "n_sweeps": self.n_sweeps,
            "arc_degrees": self.arc_degrees,
            "angular_step": self.angular_step,
            "sweep_duration": self.sweep_duration,
            "pause_duration": self.pause_duration,
            "alternate_direction": self.alternate_direction,
            "schedule": [list(e) for e in self.schedule],
        }

    @staticmethod
    def from_dict(d: dict) -> "ScanProtocol":
        return ScanProtocol(
            n_sweeps=int(d["n_sweeps"]),
            arc_degrees=float(d["arc_degrees"]),
            angular_step=float(d["angular_step"]),
            sweep_duration=float(d["sweep_duration"]),
            pause_duration=float(d["pause_duration"]),
            alternate_direction=bool(d["alternate_direction"]),
            schedule=tuple((int(s), float(a), float(t)) for s, a, t in d["schedule"]),
        )


def make_protocol(
    n_sweeps: int,
    arc_degrees: float = 200.0,
    angular_step: float = 0.8,
    sweep_duration: float = 4.3,
    pause_duration: float = 1.0,
    alternate_direction: bool = True,
) -> ScanProtocol:
    """Build the timed schedule: ``floor(arc/step)+1`` angles per sweep,
    timestamps uniform over each sweep, alternating direction if requested."""
    if n_sweeps < 1:
        raise ConfigurationError("n_sweeps must be >= 1")
    if not (0 < angular_step <= arc_degrees):
        raise ConfigurationError("need 0 < angular_step <= arc_degrees")
    if sweep_duration < 0 or pause_duration < 0:
        raise ConfigurationError("durations must be >= 0")
    # tolerate float roundoff in arc/step so e.g. 200/0.8 counts as exactly 250
    n_angles = int(math.floor(arc_degrees / angular_step + 1e-9)) + 1
    base_angles = np.arange(n_angles) * angular_step
    schedule = []
    for k in range(n_sweeps):
        start = k * (sweep_duration + pause_duration)
        times = start + np.linspace(0.0, sweep_duration, n_angles)
        angles = base_angles[::-1] if (alternate_direction and k % 2 == 1) else base_angles
        schedule.extend((k, float(a), float(t)) for a, t in zip(angles, times))
    stamps = [t for _, _, t in schedule]
    if any(t2 <= t1 for t1, t2 in zip(stamps, stamps[1:])):
        raise ConfigurationError(
            "schedule timestamps must be strictly increasing; increase "
            "sweep_duration and/or pause_duration"
        )
    return ScanProtocol(
        n_sweeps=n_sweeps,
        arc_degrees=arc_degrees,
        angular_step=angular_step,
        sweep_duration=sweep_duration,
        pause_duration=pause_duration,
        alternate_direction=alternate_direction,
        schedule=tuple(schedule),
    )


@dataclass(frozen=True, eq=False)
class TimedSinogram:
    """One detector row per schedule entry, with its angle and timestamp."""

    data: np.ndarray  # (n_rows, detector_bins)
    angles: np.ndarray  # (n_rows,)
    timestamps: np.ndarray  # (n_rows,)
    sweep_indices: np.ndarray  # (n_rows,) int
    geometry: Geometry
    protocol: ScanProtocol

    def __post_init__(self):
        n = len(self.protocol.schedule)
        if self.data.shape != (n, self.geometry.detector_bins):
            raise ShapeError(
                f"sinogram data {self.data.shape} must be "
                f"{(n, self.geometry.detector_bins)}"
            )

    def sweep_rows(self, k: int):
        """(data, angles) of sweep k, in acquisition order."""
        sel = self.sweep_indices == k
        return self.data[sel], self.angles[sel]


def project_dynamic(
    phantom: DynamicPhantom,
    protocol: ScanProtocol,
    geometry: Geometry,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> TimedSinogram:
    """Acquire the phantom through the schedule, one timed row per entry.

    Because each row is the projection of a label map whose pixels share
    per-label attenuation, row(theta, t) = sum_l tac_l(t) * proj(indicator_l,
    theta); the per-label projections are computed once per distinct angle,
    which keeps multi-sweep acquisition cheap.
    """
    if noise_sigma < 0:
        raise ConfigurationError("noise_sigma must be >= 0")
    if phantom.labels.shape != (geometry.height, geometry.width):
        raise ShapeError(
            f"phantom shape {phantom.labels.shape} does not match geometry"
        )
    if phantom.pixel_spacing != geometry.pixel_spacing:
        raise ConfigurationError("phantom and geometry pixel_spacing differ")

    label_ids = np.unique(phantom.labels)
    angle_keys = sorted({round(a % 360.0, 9) for _, a, _ in protocol.schedule})
    label_proj = {}  # angle key -> (n_labels, bins)
    for ang in angle_keys:
        mat = system_matrix(geometry, ang)
        label_proj[ang] = np.stack(
            [mat @ (phantom.labels == l).ravel().astype(float) for l in label_ids]
        )

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    active = geometry.active_bins()
    n_rows = len(protocol.schedule)
    data = np.empty((n_rows, geometry.detector_bins))
    angles = np.empty(n_rows)
    stamps = np.empty(n_rows)
    sweeps = np.empty(n_rows, dtype=int)
    for i, (k, ang, t) in enumerate(protocol.schedule):
        atten = np.array([eval_tac(phantom.tacs[int(l)], t) for l in label_ids])
        row = atten @ label_proj[round(ang % 360.0, 9)]
        if noise_sigma > 0:
            row = row + rng.normal(0.0, noise_sigma, size=row.shape)
        row[~active] = 0.0
        data[i], angles[i], stamps[i], sweeps[i] = row, ang, t, k
    return TimedSinogram(
        data=data,
        angles=angles,
        timestamps=stamps,
        sweep_indices=sweeps,
        geometry=geometry,
        protocol=protocol,
    )


def save_sinogram(sino: TimedSinogram, out_dir) -> None:
    """Write rows as float32 TSR plus a JSON sidecar with the schedule."""
    from pathlib import Path

    from . import tensorio

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "sinogram.tsr", sino.data.astype(np.float32))
    tensorio.write_json(
        out / "sinogram.json",
        {
            "angles": sino.angles.tolist(),
            "timestamps": sino.timestamps.tolist(),
            "sweep_indices": sino.sweep_indices.tolist(),
            "geometry": sino.geometry.to_dict(),
            "protocol": sino.protocol.to_dict(),
        },
    )


def load_sinogram(in_dir) -> TimedSinogram:
    from pathlib import Path

    from . import tensorio

    src = Path(in_dir)
    data = tensorio.read_tensor(src / "sinogram.tsr").astype(float)
    meta = tensorio.read_json(src / "sinogram.json")
    return TimedSinogram(
        data=data,
        angles=np.asarray(meta["angles"], dtype=float),
        timestamps=np.asarray(meta["timestamps"], dtype=float),
        sweep_indices=np.asarray(meta["sweep_indices"], dtype=int),
        geometry=Geometry.from_dict(meta["geometry"]),
        protocol=ScanProtocol.from_dict(meta["protocol"]),
    )
