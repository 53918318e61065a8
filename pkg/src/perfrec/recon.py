"""Iterative least-squares reconstruction of sinogram rows.

The "straightforward" path treats all rows of one sweep as simultaneous and
solves ``min ||A x - p||_2`` with CGLS (default) or SIRT.  Solvers start from
zero, stop on a relative-residual tolerance or iteration cap, and record the
residual history.  CGLS optionally carries Tikhonov damping for truncated
(ill-posed) data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError
from .projector import Geometry, TimedSinogram, stacked_matrix

# count of static solves performed since import / last reset; the basis-
# coefficient pipeline asserts it issues exactly N of them
SOLVE_COUNT = 0


def reset_solve_count() -> None:
    global SOLVE_COUNT
    SOLVE_COUNT = 0


@dataclass(frozen=True, eq=False)
class Volume:
    """Reconstructed 2D attenuation grid."""

    data: np.ndarray  # (H, W) float
    pixel_spacing: float = 1.0
    residuals: tuple = ()  # relative residual per iteration of the solve

    def __post_init__(self):
        if not np.all(np.isfinite(self.data)):
            raise ConfigurationError("volume data must be finite")

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class ReconConfig:
    solver: str = "cgls"  # "cgls" | "sirt"
    max_iters: int = 50
    tolerance: float = 1e-6
    nonneg_clamp: bool = False
    damping: float = 0.0  # Tikhonov weight for truncated/ill-posed data

    def __post_init__(self):
        if self.solver not in ("cgls", "sirt"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.tolerance <= 0:
            raise ConfigurationError("tolerance must be > 0")
        if self.damping < 0:
            raise ConfigurationError("damping must be >= 0")


def _cgls(A, b, max_iters, tol, damping):
    lam2 = damping * damping
    x = np.zeros(A.shape[1])
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x, [0.0]
    r = b.copy()
    s = A.T @ r
    p = s.copy()
    gamma = float(s @ s)
    history = [1.0]
    for _ in range(max_iters):
        q = A @ p
        delta = float(q @ q) + lam2 * float(p @ p)
        if delta <= 0.0:
            break
        alpha = gamma / delta
        x_next = x + alpha * p
        r_next = r - alpha * q
        res = float(np.linalg.norm(r_next)) / b_norm
        if res > history[-1]:
            break  # numerical stagnation: keep the previous iterate
        x, r = x_next, r_next
        history.append(res)
        if res <= tol:
            break
        s = A.T @ r - lam2 * x
        gamma_next = float(s @ s)
        if gamma_next == 0.0:
            break
        p = s + (gamma_next / gamma) * p
        gamma = gamma_next
    return x, history


def _sirt(A, b, max_iters, tol, clamp):
    row_sum = np.asarray(np.abs(A).sum(axis=1)).ravel()
    col_sum = np.asarray(np.abs(A).sum(axis=0)).ravel()
    r_inv = np.divide(1.0, row_sum, out=np.zeros_like(row_sum), where=row_sum > 0)
    c_inv = np.divide(1.0, col_sum, out=np.zeros_like(col_sum), where=col_sum > 0)
    x = np.zeros(A.shape[1])
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x, [0.0]
    history = [1.0]
    for _ in range(max_iters):
        resid = b - A @ x
        x_next = x + c_inv * (A.T @ (r_inv * resid))
        if clamp:
            np.maximum(x_next, 0.0, out=x_next)
        res = float(np.linalg.norm(b - A @ x_next)) / b_norm
        if res > history[-1]:
            break
        x = x_next
        history.append(res)
        if res <= tol:
            break
    return x, history


def reconstruct_static(
    rows: np.ndarray,
    angles_deg,
    geometry: Geometry,
    config: ReconConfig = ReconConfig(),
) -> Volume:
    """Least-squares volume from rows acquired at ``angles_deg``."""
    global SOLVE_COUNT
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.size == 0:
        raise InputError("empty sinogram rows")
    if not np.all(np.isfinite(rows)):
        raise InputError("sinogram rows contain non-finite values")
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    if rows.shape != (angles.size, geometry.detector_bins):
        raise InputError(
            f"rows shape {rows.shape} incompatible with {angles.size} angles x "
            f"{geometry.detector_bins} bins"
        )
    A = stacked_matrix(geometry, angles)
    b = rows.ravel()
    if config.solver == "cgls":
        x, history = _cgls(A, b, config.max_iters, config.tolerance, config.damping)
        if config.nonneg_clamp:
            np.maximum(x, 0.0, out=x)
    else:
        x, history = _sirt(A, b, config.max_iters, config.tolerance, config.nonneg_clamp)
    SOLVE_COUNT += 1
    return Volume(
        data=x.reshape(geometry.height, geometry.width),
        pixel_spacing=geometry.pixel_spacing,
        residuals=tuple(history),
    )


def reconstruct_sweeps(
    sino: TimedSinogram, config: ReconConfig = ReconConfig()
) -> list:
    """One straightforward reconstruction per sweep, in sweep order."""
    volumes = []
    for k in range(sino.protocol.n_sweeps):
        data, angles = sino.sweep_rows(k)
        if data.shape[0] == 0:
            raise InputError(f"sweep {k} has no rows")
        volumes.append(reconstruct_static(data, angles, sino.geometry, config))
    return volumes


def residual_csv_rows(volume: Volume):
    """(iteration, relative residual) pairs for CSV export."""
    return [(i, r) for i, r in enumerate(volume.residuals)]
