"""Joint geometric augmentation for image/mask pairs.

One transform is sampled per pair and applied identically to both: the
image with bilinear interpolation, the mask with nearest neighbour so it
stays binary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class AugmentationConfig:
    p_apply: float = 0.75
    p_hflip: float = 0.8
    p_vflip: float = 0.8
    max_rotation: float = 45.0  # degrees, symmetric
    max_translation: float = 32.0  # pixels, symmetric, both axes

    def validate(self) -> "AugmentationConfig":
        for name in ("p_apply", "p_hflip", "p_vflip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")
        if self.max_rotation < 0 or self.max_translation < 0:
            raise ConfigurationError("rotation/translation ranges must be >= 0")
        return self


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    config: AugmentationConfig,
    rng: np.random.Generator,
):
    """Return an augmented (image, mask) pair, or copies when the gate misses.

    Draw order is fixed (gate, hflip, vflip, angle, translation) so a given
    generator state always yields the same transform.
    """
    config.validate()
    if image.shape != mask.shape:
        raise ShapeError(f"image {image.shape} != mask {mask.shape}")
    if rng.random() >= config.p_apply:
        return image.copy(), mask.copy()

    hflip = rng.random() < config.p_hflip
    vflip = rng.random() < config.p_vflip
    angle = rng.uniform(-config.max_rotation, config.max_rotation)
    shift = rng.uniform(-config.max_translation, config.max_translation, size=2)

    # Forward map: flip about center, rotate by angle, translate by shift.
    # affine_transform wants the inverse (output -> input) matrix/offset.
    theta = math.radians(angle)
    rot_inv = np.array(
        [[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]]
    )
    flip = np.diag([-1.0 if vflip else 1.0, -1.0 if hflip else 1.0])
    matrix = flip @ rot_inv
    center = (np.asarray(image.shape, dtype=float) - 1.0) / 2.0
    offset = center - matrix @ (center + shift)

    out_image = ndimage.affine_transform(
        image.astype(np.float32), matrix, offset=offset, order=1, mode="constant"
    )
    out_mask = ndimage.affine_transform(
        mask, matrix, offset=offset, order=0, mode="constant", cval=0
    )
    return out_image, out_mask
