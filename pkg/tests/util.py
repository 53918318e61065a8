"""Shared fixtures-by-hand for the reconstruction tests."""

import numpy as np

from perfrec import TimedSinogram, evaluate_basis
from perfrec.projector import system_matrix


def inspan_sinogram(phantom, protocol, geometry, basis, coef_by_label):
    """Timed sinogram whose every bin's time course lies exactly in the span
    of ``basis``: per-label TACs are linear combinations of the basis
    functions, so row(theta, t) = sum_l tac_l(t) * proj(indicator_l, theta).

    Returns (sinogram, tac_fn) where tac_fn(times) -> ground-truth TAC image
    stack of shape (len(times), H, W).
    """
    labels = sorted(int(v) for v in np.unique(phantom.labels))
    templates = {}
    for ang in sorted({round(a % 360.0, 9) for _, a, _ in protocol.schedule}):
        mat = system_matrix(geometry, ang)
        templates[ang] = np.stack(
            [mat @ (phantom.labels == l).ravel().astype(float) for l in labels]
        )
    n = len(protocol.schedule)
    data = np.empty((n, geometry.detector_bins))
    angles = np.empty(n)
    stamps = np.empty(n)
    sweeps = np.empty(n, dtype=int)
    for i, (k, ang, t) in enumerate(protocol.schedule):
        psi = evaluate_basis(basis, t)[:, 0]
        tacs = np.array([coef_by_label[l] @ psi for l in labels])
        data[i] = tacs @ templates[round(ang % 360.0, 9)]
        angles[i], stamps[i], sweeps[i] = ang, t, k
    sino = TimedSinogram(
        data=data,
        angles=angles,
        timestamps=stamps,
        sweep_indices=sweeps,
        geometry=geometry,
        protocol=protocol,
    )

    def tac_fn(times):
        psi = evaluate_basis(basis, times)  # (N, T)
        out = np.zeros((psi.shape[1],) + phantom.labels.shape)
        for l in labels:
            out[:, phantom.labels == l] = (coef_by_label[l] @ psi)[:, None]
        return out

    return sino, tac_fn
