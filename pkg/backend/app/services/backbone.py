"""
Small trainable convolutional stem producing the multi-scale feature pyramid.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.diffmath import Conv2d, DTensor, LayerNorm, Linear, Module, relu
from app.core.errors import ShapeError
from app.models.predictions import FeaturePyramid

logger = logging.getLogger(__name__)

PIXEL_CENTER = 127.5


def pad_to_multiple(image: np.ndarray, multiple: int, mask: Optional[np.ndarray] = None
                    ) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-pad bottom/right so both sides divide ``multiple``; returns (image, valid mask)"""
    height, width = image.shape[:2]
    target_h = -(-height // multiple) * multiple
    target_w = -(-width // multiple) * multiple
    valid = np.ones((height, width), dtype=bool) if mask is None else mask.astype(bool)
    if (target_h, target_w) == (height, width):
        return image, valid
    padded = np.zeros((target_h, target_w) + image.shape[2:], dtype=image.dtype)
    padded[:height, :width] = image
    padded_mask = np.zeros((target_h, target_w), dtype=bool)
    padded_mask[:height, :width] = valid
    logger.debug(f"Padded input {height}x{width} -> {target_h}x{target_w}")
    return padded, padded_mask


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Normalized pixel-center coordinates, row-major, [H * W, 2] as (x, y)"""
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    return np.stack([(cols.ravel() + 0.5) / width, (rows.ravel() + 0.5) / height], axis=-1)


def level_validity(mask: np.ndarray, stride: int, height: int, width: int) -> np.ndarray:
    """A level pixel is valid when the input pixel under its center is valid"""
    rows = np.minimum((np.arange(height) + 0.5) * stride, mask.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(width) + 0.5) * stride, mask.shape[1] - 1).astype(int)
    return mask[np.ix_(rows, cols)].ravel()


class ConvStem(Module):
    """Three stride-2 convolutions reach stride 8; each further level halves again"""

    def __init__(self, channels: Sequence[int], n_levels: int, d_model: int, rng: np.random.Generator):
        c1, c2, c3 = channels
        self.n_levels = n_levels
        self.convs = [
            Conv2d(3, c1, 3, rng, stride=2, padding=1),
            Conv2d(c1, c2, 3, rng, stride=2, padding=1),
            Conv2d(c2, c3, 3, rng, stride=2, padding=1),
        ]
        self.extra = [Conv2d(c3, c3, 3, rng, stride=2, padding=1) for _ in range(n_levels - 1)]
        self.projections = [Linear(c3, d_model, rng) for _ in range(n_levels)]
        self.norms = [LayerNorm(d_model) for _ in range(n_levels)]

    @property
    def strides(self) -> List[int]:
        return [8 * 2 ** level for level in range(self.n_levels)]

    def __call__(self, image: np.ndarray, mask: Optional[np.ndarray] = None) -> FeaturePyramid:
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeError("stem_forward", [image.shape], "expected [H, W, 3]")
        image, valid_mask = pad_to_multiple(image, self.strides[-1], mask)
        x = DTensor((image.astype(np.float64) - PIXEL_CENTER) / PIXEL_CENTER)
        for conv in self.convs:
            x = relu(conv(x))

        maps, coords, valid = [], [], []
        for level in range(self.n_levels):
            if level > 0:
                x = relu(self.extra[level - 1](x))
            height, width = x.shape[0], x.shape[1]
            maps.append(self.norms[level](self.projections[level](x)))
            coords.append(pixel_grid(height, width))
            valid.append(level_validity(valid_mask, self.strides[level], height, width))
        return FeaturePyramid(maps=maps, coords=coords, valid=valid, canvas=image.shape[:2])
