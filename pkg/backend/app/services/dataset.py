"""
Annotation Dataset Service
Reads and writes the annotation JSON format, converts line-regime labels and
assembles padded batches.

Annotation schema (absolute pixel coordinates):
    {"images": [{"file": str, "width": int, "height": int,
                 "instances": [{"kind": "polygon" | "bezier_pair" | "line",
                                "points": [[x, y], ...], "transcript": str}]}]}

bezier_pair lists the top side's four control points in reading order, then
the bottom side's four in reverse (the outline's traversal order).
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, ValidationError

from app.core.errors import AnnotationError, DataError, DomainError
from app.models.geometry import CubicBezier, TextInstanceGT
from app.models.scene import Scene
from app.services.geometry import gt_from_line, gt_from_polygon, gt_from_sides, perturb_line
from app.services.glyphs import GlyphSet

logger = logging.getLogger(__name__)

SEED_MANIFEST_SUFFIX = ".seeds.json"


class AnnotationInstance(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["polygon", "bezier_pair", "line"]
    points: List[Tuple[float, float]]
    transcript: str


class AnnotationImage(BaseModel):
    model_config = ConfigDict(extra="forbid")

    file: str
    width: int
    height: int
    instances: List[AnnotationInstance] = []


class AnnotationFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    images: List[AnnotationImage]


def _check_point_count(instance: AnnotationInstance, record: int, field: str) -> None:
    count = len(instance.points)
    if instance.kind == "polygon" and (count < 4 or count % 2):
        raise AnnotationError(f"polygon needs an even number (>= 4) of points, got {count}", record, field)
    if instance.kind == "bezier_pair" and count != 8:
        raise AnnotationError(f"bezier_pair needs exactly 8 control points, got {count}", record, field)
    if instance.kind == "line" and count < 2:
        raise AnnotationError(f"line needs at least 2 points, got {count}", record, field)


def instance_to_gt(instance: AnnotationInstance, width: int, height: int, num_points: int,
                   glyphs: GlyphSet, record: int = 0, position: int = 0) -> TextInstanceGT:
    """Ground truth for one record instance, normalized to the image size"""
    prefix = f"instances[{position}]"
    _check_point_count(instance, record, f"{prefix}.points")
    glyphs.validate(instance.transcript, record)
    points = np.asarray(instance.points, dtype=np.float64) / np.array([width, height], dtype=np.float64)
    try:
        if instance.kind == "polygon":
            return gt_from_polygon(points, instance.transcript, num_points)
        if instance.kind == "bezier_pair":
            top = CubicBezier(points[:4])
            bot = CubicBezier(points[4:][::-1])
            return gt_from_sides(top, bot, instance.transcript, num_points)
        return gt_from_line(points, instance.transcript, num_points)
    except (AnnotationError, DomainError) as e:
        message = e.detail if isinstance(e, AnnotationError) else str(e)
        raise AnnotationError(message, record, f"{prefix}.points") from e


def _load_image(path: Path, record: int) -> np.ndarray:
    if not path.exists():
        raise AnnotationError(f"image not found: {path}", record, "file")
    with Image.open(path) as img:
        return np.array(img.convert("RGB"))


def load_annotations(path: Union[str, Path], glyphs: GlyphSet, num_points: int,
                     image_root: Optional[Union[str, Path]] = None) -> List[Scene]:
    """
    Parse an annotation file into scenes

    Args:
        path: Annotation JSON
        glyphs: Vocabulary the transcripts must fit
        num_points: Points sampled per curve
        image_root: Directory image files are relative to (default: the JSON's directory)

    Raises:
        AnnotationError: naming the record index and field of the first violation
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise AnnotationError(f"cannot read annotation file {path}: {e}") from e
    try:
        parsed = AnnotationFile.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        loc = list(first["loc"])
        record = loc[1] if len(loc) > 1 and loc[0] == "images" and isinstance(loc[1], int) else None
        field = ".".join(str(p) for p in loc[2:]) if record is not None else ".".join(str(p) for p in loc)
        raise AnnotationError(first["msg"], record, field or None) from None

    root = Path(image_root) if image_root else path.parent
    scenes = []
    for index, entry in enumerate(parsed.images):
        image = _load_image(root / entry.file, index)
        if image.shape[:2] != (entry.height, entry.width):
            raise AnnotationError(
                f"declared size {entry.width}x{entry.height} differs from image {image.shape[1]}x{image.shape[0]}",
                index, "width",
            )
        instances = [instance_to_gt(inst, entry.width, entry.height, num_points, glyphs, index, j)
                     for j, inst in enumerate(entry.instances)]
        scenes.append(Scene(name=Path(entry.file).stem, image=image, instances=instances))
    logger.info(f"Loaded {len(scenes)} annotated images from {path}")
    return scenes


def gt_to_record(gt: TextInstanceGT, width: int, height: int) -> Dict:
    """Best available annotation kind for a ground-truth instance"""
    scale = np.array([width, height], dtype=np.float64)
    if gt.sides is not None:
        top, bot = gt.sides
        points = np.vstack([top.control, bot.control[::-1]]) * scale
        kind = "bezier_pair"
    elif gt.polygon is not None:
        points, kind = gt.polygon * scale, "polygon"
    else:
        points, kind = gt.center * scale, "line"
    return {"kind": kind, "points": points.tolist(), "transcript": gt.transcript}


def export_annotations(scenes: Sequence[Scene], path: Union[str, Path], image_dir: str = "images") -> Path:
    """Write PNG images, the annotation JSON and a sidecar seed manifest; returns the JSON path"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    (path.parent / image_dir).mkdir(parents=True, exist_ok=True)
    images, seeds = [], []
    for scene in scenes:
        relative = f"{image_dir}/{scene.name}.png"
        Image.fromarray(scene.image).save(path.parent / relative)
        images.append({
            "file": relative,
            "width": scene.width,
            "height": scene.height,
            "instances": [gt_to_record(gt, scene.width, scene.height) for gt in scene.instances],
        })
        seeds.append({"file": relative, "seed": scene.seed})
    path.write_text(json.dumps({"images": images}, indent=2))
    seed_manifest(path).write_text(json.dumps({"scenes": seeds}, indent=2))
    logger.info(f"Exported {len(scenes)} scenes to {path}")
    return path


def seed_manifest(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + SEED_MANIFEST_SUFFIX)


def to_line_annotations(scenes: Sequence[Scene], shift: float = 0.0, shrink: float = 0.0,
                        rng: Optional[np.random.Generator] = None) -> List[Scene]:
    """Replace every instance by a (perturbed) center line without boundaries"""
    rng = rng if rng is not None else np.random.default_rng(0)
    converted = []
    for scene in scenes:
        instances = [gt_from_line(perturb_line(gt, shift, shrink, rng), gt.transcript, gt.n)
                     for gt in scene.instances]
        converted.append(Scene(name=scene.name, image=scene.image, instances=instances, seed=scene.seed,
                               mask=scene.mask))
    return converted


@dataclass
class Batch:
    """Images padded to one canvas; ground truth normalized to that canvas"""

    images: np.ndarray
    masks: np.ndarray
    instances: List[List[TextInstanceGT]]
    indices: List[int]
    names: List[str]

    def __len__(self) -> int:
        return len(self.indices)


def fit_to_canvas(image: np.ndarray, target_size: int) -> Tuple[np.ndarray, float]:
    """Resize so the longer side equals target_size; returns (image, factor)"""
    height, width = image.shape[:2]
    factor = target_size / max(height, width)
    if factor == 1.0:
        return image, factor
    size = (max(1, int(round(width * factor))), max(1, int(round(height * factor))))
    return cv2.resize(image, size, interpolation=cv2.INTER_LINEAR), factor


def make_batch(dataset: Sequence[Scene], indices: Sequence[int], target_size: Optional[int] = None) -> Batch:
    """
    Stack scenes into one padded batch

    With target_size each image is first scaled so its longer side fits the
    square canvas; otherwise images are padded to the largest height and width.
    Padding goes to the bottom and right and is marked False in the masks.
    """
    indices = [int(i) for i in indices]
    if not indices:
        raise DataError("cannot build an empty batch")
    for i in indices:
        if not 0 <= i < len(dataset):
            raise DataError(f"index {i} outside dataset of {len(dataset)} scenes")

    images = []
    for i in indices:
        image = dataset[i].image
        if target_size is not None:
            image, _ = fit_to_canvas(image, target_size)
        images.append(image)
    if target_size is not None:
        canvas_h = canvas_w = target_size
    else:
        canvas_h = max(img.shape[0] for img in images)
        canvas_w = max(img.shape[1] for img in images)

    batch_images = np.zeros((len(images), canvas_h, canvas_w, 3), dtype=np.uint8)
    masks = np.zeros((len(images), canvas_h, canvas_w), dtype=bool)
    instances = []
    for slot, (i, image) in enumerate(zip(indices, images)):
        height, width = image.shape[:2]
        batch_images[slot, :height, :width] = image
        masks[slot, :height, :width] = True if dataset[i].mask is None else _resized_mask(dataset[i].mask, width, height)
        ratio = np.array([width / canvas_w, height / canvas_h])
        instances.append([gt.transformed(lambda p, r=ratio: p * r) for gt in dataset[i].instances])
    return Batch(images=batch_images, masks=masks, instances=instances, indices=indices,
                 names=[dataset[i].name for i in indices])


def _resized_mask(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    if mask.shape == (height, width):
        return mask.astype(bool)
    return cv2.resize(mask.astype(np.uint8), (width, height), interpolation=cv2.INTER_NEAREST).astype(bool)
