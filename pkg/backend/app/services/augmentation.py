"""
Training-time augmentation: rotation, instance-aware crop, resize and color
jitter. Geometric transforms move the image and every ground-truth point
together; points stay normalized to the output canvas.

Rotation convention: a positive angle turns the picture clockwise as
displayed (image y axis points down), about the canvas center.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from app.config.runtime import MAX_CROP_RETRIES
from app.config.settings import AugmentPolicy
from app.models.geometry import TextInstanceGT

logger = logging.getLogger(__name__)

Sample = Tuple[np.ndarray, List[TextInstanceGT]]


def _points(gts: Sequence[TextInstanceGT]) -> np.ndarray:
    parts = []
    for gt in gts:
        parts.append(gt.center)
        if gt.has_boundary:
            parts.extend([gt.top, gt.bot])
    return np.vstack(parts) if parts else np.zeros((0, 2))


def rotation_matrix(angle_degrees: float, width: int, height: int) -> np.ndarray:
    """2x3 map of continuous pixel coordinates for a clockwise turn about the center"""
    theta = math.radians(angle_degrees)
    linear = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    center = np.array([width / 2.0, height / 2.0])
    return np.hstack([linear, (center - linear @ center)[:, None]])


def rotate(image: np.ndarray, gts: Sequence[TextInstanceGT], angle_degrees: float) -> Sample:
    height, width = image.shape[:2]
    matrix = rotation_matrix(angle_degrees, width, height)
    linear, shift = matrix[:, :2], matrix[:, 2]
    scale = np.array([width, height], dtype=np.float64)

    def move(points: np.ndarray) -> np.ndarray:
        return ((points * scale) @ linear.T + shift) / scale

    # cv2 indexes pixel centers at integers; continuous coordinates put them at +0.5
    pixel_matrix = np.hstack([linear, (linear @ np.array([0.5, 0.5]) + shift - 0.5)[:, None]])
    rotated = cv2.warpAffine(image, pixel_matrix, (width, height), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return rotated, [gt.transformed(move) for gt in gts]


def crop(image: np.ndarray, gts: Sequence[TextInstanceGT], origin: Tuple[int, int], size: Tuple[int, int]) -> Sample:
    """Cut the window at origin (x, y) with size (w, h) in pixels"""
    height, width = image.shape[:2]
    x0, y0 = origin
    crop_w, crop_h = size
    scale = np.array([width, height], dtype=np.float64)
    new_scale = np.array([crop_w, crop_h], dtype=np.float64)
    offset = np.array([x0, y0], dtype=np.float64)

    def move(points: np.ndarray) -> np.ndarray:
        return (points * scale - offset) / new_scale

    return image[y0:y0 + crop_h, x0:x0 + crop_w].copy(), [gt.transformed(move) for gt in gts]


def resize(image: np.ndarray, gts: Sequence[TextInstanceGT], factor: float) -> Sample:
    height, width = image.shape[:2]
    size = (max(1, int(round(width * factor))), max(1, int(round(height * factor))))
    # normalized coordinates are invariant under a uniform rescale
    return cv2.resize(image, size, interpolation=cv2.INTER_LINEAR), list(gts)


def color_jitter(image: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    pixels = image.astype(np.float64)
    mean = pixels.mean()
    pixels = ((pixels - mean) * contrast + mean) * brightness
    return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)


def _inside(points: np.ndarray) -> bool:
    return bool(np.all(points >= 0.0) and np.all(points <= 1.0))


def _random_rotation(image, gts, rng, max_angle: float) -> Sample:
    for _ in range(MAX_CROP_RETRIES):
        angle = float(rng.uniform(-max_angle, max_angle))
        rotated, moved = rotate(image, gts, angle)
        if all(_inside(gt.center) for gt in moved):
            return rotated, moved
    logger.debug("No rotation kept every instance on the canvas; skipping rotation")
    return image, list(gts)


def _random_crop(image, gts, rng, min_ratio: float) -> Sample:
    height, width = image.shape[:2]
    pixels = _points(gts) * np.array([width, height])
    for _ in range(MAX_CROP_RETRIES):
        crop_w = int(round(width * rng.uniform(min_ratio, 1.0)))
        crop_h = int(round(height * rng.uniform(min_ratio, 1.0)))
        x0 = int(rng.integers(0, width - crop_w + 1))
        y0 = int(rng.integers(0, height - crop_h + 1))
        if len(pixels) and not (np.all(pixels[:, 0] >= x0) and np.all(pixels[:, 0] <= x0 + crop_w)
                                and np.all(pixels[:, 1] >= y0) and np.all(pixels[:, 1] <= y0 + crop_h)):
            continue
        return crop(image, gts, (x0, y0), (crop_w, crop_h))
    logger.debug("No crop window contained every instance; skipping crop")
    return image, list(gts)


def augment(image: np.ndarray, gts: Sequence[TextInstanceGT], rng: np.random.Generator,
            policy: Optional[AugmentPolicy] = None, line_mode: bool = False) -> Sample:
    """Apply the enabled transforms in the order rotate, crop, resize, jitter.

    Line mode widens the rotation range and never crops, since a crop that
    keeps whole instances needs their extent.
    """
    policy = policy or AugmentPolicy()
    if policy.is_identity:
        return image, list(gts)
    if policy.rotate:
        image, gts = _random_rotation(image, gts, rng, policy.line_max_angle if line_mode else policy.max_angle)
    if policy.crop and not line_mode:
        image, gts = _random_crop(image, gts, rng, policy.crop_min_ratio)
    if policy.resize:
        image, gts = resize(image, gts, float(rng.uniform(*policy.resize_range)))
    if policy.color_jitter:
        image = color_jitter(image, float(rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness)),
                             float(rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast)))
    return image, list(gts)
