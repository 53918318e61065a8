"""Tversky-family losses with multi-scale supervision.

The network emits four sigmoid maps on a halving ladder; training compares
each against a nearest-neighbour downsampled copy of the ground truth and
averages the focal Tversky losses across the scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    """Weights for the focal Tversky loss and its multi-scale sum.

    ``alpha`` penalizes missed foreground (false negatives), ``beta``
    spurious foreground (false positives); alpha > beta trades precision
    for sensitivity.  ``gamma`` sharpens the focus on poorly segmented
    images via the exponent 1/gamma.  ``extra_scales`` is the number of
    reduced-resolution heads supervised alongside the full one.
    """

    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 4.0 / 3.0
    epsilon: float = 1e-7
    extra_scales: int = 3

    def validate(self) -> "LossConfig":
        if self.gamma <= 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be non-negative")
        if self.extra_scales < 0:
            raise ConfigurationError("extra_scales must be non-negative")
        return self


def tversky_index(
    pred: torch.Tensor,
    gt: torch.Tensor,
    alpha: float = 0.7,
    beta: float = 0.3,
    epsilon: float = 1e-7,
) -> torch.Tensor:
    """Soft Tversky overlap between a probability map and a binary mask.

        TI = (sum p*g + eps)
             / (sum p*g + alpha*sum (1-p)*g + beta*sum p*(1-g) + eps)

    With alpha = beta = 0.5 this reduces to the soft Dice coefficient.
    Both-empty inputs score 1 by the epsilon terms.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {tuple(pred.shape)} != gt {tuple(gt.shape)}")
    g = gt.to(pred.dtype)
    overlap = (pred * g).sum()
    missed = ((1.0 - pred) * g).sum()
    spurious = (pred * (1.0 - g)).sum()
    return (overlap + epsilon) / (overlap + alpha * missed + beta * spurious + epsilon)


def focal_tversky_loss(
    pred: torch.Tensor, gt: torch.Tensor, config: LossConfig = LossConfig()
) -> torch.Tensor:
    """(1 - TI)^(1/gamma); gamma = 4/3 gives exponent 0.75."""
    config.validate()
    ti = tversky_index(pred, gt, config.alpha, config.beta, config.epsilon)
    return (1.0 - ti) ** (1.0 / config.gamma)


def downsample_labels(gt: torch.Tensor) -> torch.Tensor:
    """Halve a (..., H, W) label map by nearest neighbour; binary stays binary."""
    squeeze = gt.ndim == 2
    x = gt[None, None] if squeeze else gt
    if x.ndim == 3:
        x = x[:, None]
        out = F.interpolate(x.float(), scale_factor=0.5, mode="nearest")[:, 0]
    else:
        out = F.interpolate(x.float(), scale_factor=0.5, mode="nearest")
    out = out.to(gt.dtype)
    return out[0, 0] if squeeze else out


def mss_loss(
    preds, gt: torch.Tensor, config: LossConfig = LossConfig()
) -> torch.Tensor:
    """Average focal Tversky loss across the full-resolution head and the
    ``extra_scales`` reduced heads, each against a nearest-neighbour
    downsampled ground truth."""
    config.validate()
    preds = list(preds)
    if len(preds) != config.extra_scales + 1:
        raise ShapeError(
            f"expected {config.extra_scales + 1} predictions, got {len(preds)}"
        )
    total = focal_tversky_loss(preds[0], gt, config)
    level = gt
    for pred in preds[1:]:
        level = downsample_labels(level)
        if pred.shape != level.shape:
            raise ShapeError(
                f"prediction shape {tuple(pred.shape)} does not sit on the "
                f"halving ladder (expected {tuple(level.shape)})"
            )
        total = total + focal_tversky_loss(pred, level, config)
    return total / (config.extra_scales + 1)
