"""Time separation technique: orthonormal temporal bases, projection-domain
coefficient fitting, and per-coefficient static reconstruction.

Every pixel's time-attenuation curve is modelled as a linear combination of N
orthonormal basis functions.  Fitting the basis to each detector bin's time
samples turns the time-resolved problem into N ordinary static problems
``A w_i = omega_i``; synthesizing ``sum_i w_i psi_i(t)`` then yields a TAC at
any time inside the sampled window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, InputError, UnderdeterminedError
from .projector import Geometry, TimedSinogram
from .recon import ReconConfig, Volume, reconstruct_static


@dataclass(frozen=True, eq=False)
class BasisSet:
    """N orthonormal temporal functions sampled on a uniform time grid.

    Orthonormality is under the plain discrete inner product on the grid:
    ``functions @ functions.T == I`` within 1e-6.
    """

    functions: np.ndarray  # (N, T)
    time_grid: np.ndarray  # (T,)
    t_total: float
    source: str  # "harmonic" | "svd"
    singular_values: tuple = ()  # non-empty for svd source

    def __post_init__(self):
        n, t = self.functions.shape
        if n < 1 or n > t:
            raise ConfigurationError(f"need 1 <= N <= T, got N={n}, T={t}")
        if self.time_grid.shape != (t,):
            raise ConfigurationError("time_grid length must match basis columns")
        gram = self.functions @ self.functions.T
        if np.max(np.abs(gram - np.eye(n))) > 1e-6:
            raise ConfigurationError("basis rows are not orthonormal on the grid")

    @property
    def n_functions(self) -> int:
        return self.functions.shape[0]


def _orthonormalize(raw: np.ndarray) -> np.ndarray:
    """Gram-Schmidt in row order with one re-orthogonalization pass."""
    out = []
    for f in raw.astype(float):
        v = f.copy()
        for _ in range(2):
            for q in out:
                v -= (v @ q) * q
        norm = np.linalg.norm(v)
        if norm < 1e-10 * max(1.0, np.linalg.norm(f)):
            raise ConfigurationError(
                "basis functions are linearly dependent on this time grid "
                "(grid too coarse?)"
            )
        out.append(v / norm)
    return np.stack(out)


def harmonic_basis(time_grid, t_total: float) -> BasisSet:
    """Five-function analytical basis: constant, sin/cos of one and two
    periods over ``t_total``, Gram-Schmidt-orthonormalized in that order."""
    grid = np.asarray(time_grid, dtype=float)
    if grid.size == 0:
        raise ConfigurationError("time_grid must be non-empty")
    if t_total <= 0:
        raise ConfigurationError("t_total must be > 0")
    if grid.min() < 0 or grid.max() > t_total:
        raise ConfigurationError("time_grid must lie within [0, t_total]")
    w = 2.0 * np.pi * grid / t_total
    raw = np.stack(
        [np.ones_like(grid), np.sin(w), np.cos(w), np.sin(2 * w), np.cos(2 * w)]
    )
    return BasisSet(
        functions=_orthonormalize(raw),
        time_grid=grid,
        t_total=float(t_total),
        source="harmonic",
    )


def svd_basis(tac_library: np.ndarray, time_grid, t_total: float, n: int = 5) -> BasisSet:
    """First ``n`` right-singular vectors of a prior TAC library (M x T).

    The leading component captures the dominant (static) signal; its sign is
    fixed so it has non-negative mean, the rest so their largest-magnitude
    entry is positive.
    """
    lib = np.asarray(tac_library, dtype=float)
    grid = np.asarray(time_grid, dtype=float)
    if lib.ndim != 2:
        raise ConfigurationError("tac_library must be 2D (M x T)")
    m, t = lib.shape
    if grid.shape != (t,):
        raise ConfigurationError("time_grid length must match library columns")
    if n > min(m, t):
        raise ConfigurationError(f"n={n} exceeds min(M, T)={min(m, t)}")
    _, svals, vt = np.linalg.svd(lib, full_matrices=False)
    funcs = vt[:n].copy()
    if funcs[0].mean() < 0:
        funcs[0] = -funcs[0]
    for i in range(1, n):
        peak = np.argmax(np.abs(funcs[i]))
        if funcs[i][peak] < 0:
            funcs[i] = -funcs[i]
    return BasisSet(
        functions=funcs,
        time_grid=grid,
        t_total=float(t_total),
        source="svd",
        singular_values=tuple(float(s) for s in svals[:n]),
    )


def evaluate_basis(basis: BasisSet, times) -> np.ndarray:
    """Basis values at arbitrary times, linearly interpolated on the grid;
    shape (N, len(times))."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.min() < basis.time_grid[0] or t.max() > basis.time_grid[-1]:
        raise DomainError(
            f"times must lie within the basis grid "
            f"[{basis.time_grid[0]}, {basis.time_grid[-1]}]"
        )
    return np.stack([np.interp(t, basis.time_grid, f) for f in basis.functions])


@dataclass(frozen=True, eq=False)
class ProjectionCoefficients:
    """Per-(angle, bin) basis coefficients omega, shape (N, n_angles, bins)."""

    coeffs: np.ndarray
    angles: np.ndarray  # (n_angles,) distinct projection angles
    basis: BasisSet
    geometry: Geometry

    def __post_init__(self):
        n = self.basis.n_functions
        if self.coeffs.shape != (n, self.angles.size, self.geometry.detector_bins):
            raise ConfigurationError("coefficient array shape mismatch")
        if not np.all(np.isfinite(self.coeffs)):
            raise ConfigurationError("coefficients must be finite")


def fit_projection_coeffs(sino: TimedSinogram, basis: BasisSet) -> ProjectionCoefficients:
    """Least-squares fit of the basis to each detector bin's time samples.

    All bins of one angle share their timestamps (one sample per sweep), so a
    single design-matrix factorization per angle fits every bin of that angle
    at once.  Requires at least N samples per angle (R sweeps >= N).
    """
    n = basis.n_functions
    angle_keys = np.unique(np.round(sino.angles, 9))
    coeffs = np.empty((n, angle_keys.size, sino.geometry.detector_bins))
    for k, ang in enumerate(angle_keys):
        sel = np.round(sino.angles, 9) == ang
        times = sino.timestamps[sel]
        if np.unique(times).size < n:
            raise UnderdeterminedError(
                f"angle {ang}: {np.unique(times).size} distinct time samples "
                f"< {n} basis functions (need R >= N sweeps)"
            )
        design = evaluate_basis(basis, times).T  # (samples, N)
        sol, _, _, _ = np.linalg.lstsq(design, sino.data[sel], rcond=None)
        coeffs[:, k, :] = sol
    return ProjectionCoefficients(
        coeffs=coeffs, angles=angle_keys, basis=basis, geometry=sino.geometry
    )


@dataclass(frozen=True, eq=False)
class CoefficientVolumes:
    """The N reconstructed coefficient images w_i."""

    volumes: list  # of Volume
    basis: BasisSet

    def __post_init__(self):
        if len(self.volumes) != self.basis.n_functions:
            raise ConfigurationError("need one volume per basis function")
        shapes = {v.data.shape for v in self.volumes}
        if len(shapes) != 1:
            raise ConfigurationError("coefficient volumes differ in shape")

    def stack(self) -> np.ndarray:
        return np.stack([v.data for v in self.volumes])


def reconstruct_coeff_volumes(
    pc: ProjectionCoefficients, config: ReconConfig = ReconConfig()
) -> CoefficientVolumes:
    """Solve ``A w_i = omega_i`` for each basis function: exactly N static
    reconstructions."""
    volumes = [
        reconstruct_static(pc.coeffs[i], pc.angles, pc.geometry, config)
        for i in range(pc.basis.n_functions)
    ]
    return CoefficientVolumes(volumes=volumes, basis=pc.basis)


def tst_reconstruct(
    sino: TimedSinogram, basis: BasisSet, config: ReconConfig = ReconConfig()
) -> CoefficientVolumes:
    """Full projection-domain pipeline: fit coefficients, reconstruct each."""
    return reconstruct_coeff_volumes(fit_projection_coeffs(sino, basis), config)


def synthesize_tacs(cv: CoefficientVolumes, times) -> np.ndarray:
    """TAC samples for every pixel: shape (len(times), H, W)."""
    psi = evaluate_basis(cv.basis, times)  # (N, T)
    return np.tensordot(psi.T, cv.stack(), axes=1)


def synthesize_tac(cv: CoefficientVolumes, pixel, times) -> np.ndarray:
    """TAC samples at one (row, col) pixel."""
    r, c = pixel
    h, w = cv.volumes[0].data.shape
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"pixel {pixel} outside {h}x{w} volume")
    psi = evaluate_basis(cv.basis, times)
    weights = np.array([v.data[r, c] for v in cv.volumes])
    return weights @ psi


def first_coeff_image(cv: CoefficientVolumes) -> Volume:
    """w_1, the reconstruction of the leading temporal component (the
    segmentation input image for the TST modality)."""
    return cv.volumes[0]


@dataclass(frozen=True, eq=False)
class PerfusionMaps:
    """Per-pixel perfusion summary surrogates."""

    ttp: np.ndarray  # time of TAC maximum (s)
    peak: np.ndarray  # max minus baseline (attenuation)
    auc: np.ndarray  # integral above baseline (attenuation * s)


def perfusion_surrogates(cv: CoefficientVolumes, times) -> PerfusionMaps:
    """TTP / peak / AUC per pixel with baseline = per-pixel minimum over
    the sampled times."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.size < 2:
        raise InputError("need at least 2 time samples")
    s = synthesize_tacs(cv, t)  # (T, H, W)
    base = s.min(axis=0)
    ttp = t[np.argmax(s, axis=0)]
    peak = s.max(axis=0) - base
    auc = np.trapezoid(s - base, t, axis=0)
    return PerfusionMaps(ttp=ttp, peak=peak, auc=auc)


def save_basis(basis: BasisSet, out_dir) -> None:
    """Write (time_grid, matrix) as float32 tensors plus JSON metadata."""
    from pathlib import Path

    from . import tensorio

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "basis_functions.tsr", basis.functions.astype(np.float32))
    tensorio.write_tensor(out / "basis_time_grid.tsr", basis.time_grid.astype(np.float32))
    tensorio.write_json(
        out / "basis.json",
        {
            "source": basis.source,
            "t_total": basis.t_total,
            "n": basis.n_functions,
            "singular_values": list(basis.singular_values),
        },
    )


def load_basis(in_dir) -> BasisSet:
    """Read a serialized basis; rows are re-orthonormalized to absorb the
    float32 storage rounding."""
    from pathlib import Path

    from . import tensorio

    src = Path(in_dir)
    funcs = tensorio.read_tensor(src / "basis_functions.tsr").astype(float)
    grid = tensorio.read_tensor(src / "basis_time_grid.tsr").astype(float)
    meta = tensorio.read_json(src / "basis.json")
    return BasisSet(
        functions=_orthonormalize(funcs),
        time_grid=grid,
        t_total=float(meta["t_total"]),
        source=str(meta["source"]),
        singular_values=tuple(meta.get("singular_values", [])),
    )
