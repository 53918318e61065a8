"""Segmentation evaluation: confusion-based metrics, largest-component
postprocessing, and the Mann-Whitney U significance test.

Degenerate metric cases follow a perfect-agreement convention: a ratio whose
denominator vanishes is 1 when the corresponding set on the other side is
also empty, else 0.  This keeps every metric in [0, 1] and preserves
``specificity(pred, gt) == sensitivity(~pred, ~gt)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .errors import ConfigurationError, InputError, ShapeError

ALPHA = 0.05  # significance threshold reported alongside p-values


def _as_mask(arr, name: str) -> np.ndarray:
    m = np.asarray(arr)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2D, got {m.ndim}D")
    if not np.isin(m, (0, 1)).all():
        raise InputError(f"{name} must contain only 0/1 values")
    return m.astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion_counts(pred, gt) -> ConfusionCounts:
    """Pixel-wise confusion between a predicted and ground-truth mask."""
    p = _as_mask(pred, "pred")
    g = _as_mask(gt, "gt")
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g & 1))
    fn = int(np.count_nonzero(~p & 1 & g))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass(frozen=True)
class MetricsReport:
    dice: float
    iou: float
    precision: float
    sensitivity: float
    specificity: float

    def as_dict(self) -> dict:
        return {
            "dice": self.dice,
            "iou": self.iou,
            "precision": self.precision,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
        }


def _ratio(num: int, den: int, other_side_empty: bool) -> float:
    if den == 0:
        return 1.0 if other_side_empty else 0.0
    return num / den


def metrics(c: ConfusionCounts) -> MetricsReport:
    """DSC, IoU, precision, sensitivity and specificity from counts."""
    pred_empty = c.tp + c.fp == 0
    gt_empty = c.tp + c.fn == 0
    pred_full = c.fn + c.tn == 0  # prediction covers everything
    return MetricsReport(
        dice=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, True),
        iou=_ratio(c.tp, c.tp + c.fp + c.fn, True),
        precision=_ratio(c.tp, c.tp + c.fp, gt_empty),
        sensitivity=_ratio(c.tp, c.tp + c.fn, pred_empty),
        specificity=_ratio(c.tn, c.tn + c.fp, pred_full),
    )


def largest_component(mask, connectivity: int = 8) -> np.ndarray:
    """Keep only the largest connected foreground component.

    Area ties break to the component appearing first in row-major scan
    order; the all-zero mask passes through unchanged.
    """
    m = _as_mask(mask, "mask")
    if connectivity == 8:
        structure = np.ones((3, 3), dtype=int)
    elif connectivity == 4:
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    else:
        raise ConfigurationError("connectivity must be 4 or 8")
    labeled, n = ndimage.label(m, structure=structure)
    if n == 0:
        return np.zeros_like(m)
    areas = np.bincount(labeled.ravel())[1:]  # skip background
    best_area = areas.max()
    candidates = np.flatnonzero(areas == best_area) + 1
    if candidates.size > 1:
        flat = labeled.ravel()
        first_idx = [int(np.argmax(flat == lbl)) for lbl in candidates]
        best = candidates[int(np.argmin(first_idx))]
    else:
        best = candidates[0]
    return (labeled == best).astype(np.uint8)


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" | "normal_approx"
    n1: int
    n2: int

    def as_dict(self) -> dict:
        return {
            "u": self.u_statistic,
            "p": self.p_value,
            "method": self.method,
            "n1": self.n1,
            "n2": self.n2,
        }


EXACT_LIMIT = 12  # enumerate the null exactly up to this combined sample size


def mann_whitney_u(a, b, alternative: str = "two_sided") -> UTestResult:
    """Two-sided Mann-Whitney U test with midrank ties.

    The null distribution is enumerated exactly (all rank splits) when
    n1+n2 <= EXACT_LIMIT and the pooled sample is tie-free; otherwise a
    normal approximation with tie and continuity corrections is used.
    """
    if alternative != "two_sided":
        raise ConfigurationError("only the two_sided alternative is supported")
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise InputError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled, method="average")
    r1 = float(ranks[:n1].sum())
    u = r1 - n1 * (n1 + 1) / 2.0

    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool((tie_counts > 1).any())
    n = n1 + n2
    if n <= EXACT_LIMIT and not has_ties:
        # ranks are exactly 1..n; enumerate every split of them
        all_ranks = np.arange(1, n + 1)
        offset = n1 * (n1 + 1) / 2.0
        stat_obs = min(u, n1 * n2 - u)
        hits = total = 0
        for combo in itertools.combinations(all_ranks, n1):
            u_prime = sum(combo) - offset
            total += 1
            if min(u_prime, n1 * n2 - u_prime) <= stat_obs + 1e-12:
                hits += 1
        return UTestResult(
            u_statistic=u, p_value=hits / total, method="exact", n1=n1, n2=n2
        )

    mu = n1 * n2 / 2.0
    tie_term = float(((tie_counts**3 - tie_counts).sum())) / (n * (n - 1))
    sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if sigma2 <= 0:
        return UTestResult(
            u_statistic=u, p_value=1.0, method="normal_approx", n1=n1, n2=n2
        )
    z = (abs(u - mu) - 0.5) / math.sqrt(sigma2)
    z = max(z, 0.0)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return UTestResult(
        u_statistic=u, p_value=p, method="normal_approx", n1=n1, n2=n2
    )


def summarize(values) -> dict:
    """Median and population variance of a metric group (the aggregation
    used in metric report tables)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise InputError("cannot summarize an empty group")
    return {"median": float(np.median(arr)), "variance": float(arr.var())}
