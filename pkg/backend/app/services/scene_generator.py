"""
Synthetic Scene Generator
Draws stencil-glyph words along random cubic guide curves and derives the
ground truth from the swept ribbon around each word.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np
from shapely.geometry import Polygon

from app.config.runtime import MAX_SCENE_RETRIES
from app.config.settings import DataConfig
from app.core.errors import SceneGenerationError
from app.core.seeding import child_seed, make_rng
from app.models.geometry import CubicBezier, TextInstanceGT
from app.models.scene import InstanceSpec, Scene, SceneSpec
from app.services.geometry import bezier_eval, gt_from_polygon
from app.services.glyphs import STENCIL_SHAPE, GlyphSet

logger = logging.getLogger(__name__)

# glyph width / height ratio of the 7x5 stencils
GLYPH_ASPECT = STENCIL_SHAPE[1] / STENCIL_SHAPE[0]
# gap between glyphs as a fraction of glyph height
GLYPH_SPACING = 1.0 / 7.0
RIBBON_PADDING = 1.0
RIBBON_SAMPLES = 16
ARC_SAMPLES = 256
OVERLAP_MARGIN = 2.0
MAX_TILT_DEGREES = 30.0


def _dense(guide: np.ndarray, count: int = ARC_SAMPLES) -> Tuple[np.ndarray, np.ndarray]:
    """Dense samples along a guide plus their parameters"""
    curve = CubicBezier(guide)
    ts = np.linspace(0.0, 1.0, count)
    return np.array([bezier_eval(curve, t) for t in ts]), ts


def _arc(points: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])


def guide_length(guide: np.ndarray) -> float:
    return float(_arc(_dense(guide)[0])[-1])


def _tangent(guide: np.ndarray, t: float) -> np.ndarray:
    p = np.asarray(guide, dtype=np.float64)
    d = 3 * (1 - t) ** 2 * (p[1] - p[0]) + 6 * (1 - t) * t * (p[2] - p[1]) + 3 * t ** 2 * (p[3] - p[2])
    norm = np.linalg.norm(d)
    if norm == 0.0:
        d = p[3] - p[0]
        norm = np.linalg.norm(d)
    return d / norm


def ribbon_sides(instance: InstanceSpec, samples: int = RIBBON_SAMPLES) -> Tuple[np.ndarray, np.ndarray]:
    """Top and bottom sides (pixels, reading order) of the band swept by the glyphs"""
    half = instance.glyph_height / 2.0 + RIBBON_PADDING
    curve = CubicBezier(instance.guide)
    top, bot = [], []
    for t in np.linspace(0.0, 1.0, samples):
        point = bezier_eval(curve, t)
        tx, ty = _tangent(instance.guide, t)
        # image y grows downward, so "up" is (ty, -tx)
        up = np.array([ty, -tx])
        top.append(point + half * up)
        bot.append(point - half * up)
    return np.array(top), np.array(bot)


def ribbon_polygon(instance: InstanceSpec) -> np.ndarray:
    top, bot = ribbon_sides(instance)
    return np.vstack([top, bot[::-1]])


def glyph_placements(instance: InstanceSpec) -> List[Tuple[np.ndarray, float]]:
    """(center in pixels, tangent angle in radians) per glyph at equal arc steps"""
    points, ts = _dense(instance.guide)
    arc = _arc(points)
    step = arc[-1] / len(instance.text)
    placements = []
    for i in range(len(instance.text)):
        t = float(np.interp((i + 0.5) * step, arc, ts))
        tx, ty = _tangent(instance.guide, t)
        placements.append((bezier_eval(CubicBezier(instance.guide), t), math.atan2(ty, tx)))
    return placements


def _glyph_matrix(center: np.ndarray, angle: float, height: float) -> np.ndarray:
    """Affine map from stencil cell indices to canvas pixel indices"""
    rows, cols = STENCIL_SHAPE
    sx, sy = height * GLYPH_ASPECT / cols, height / rows
    rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    linear = rotation @ np.diag([sx, sy])
    stencil_center = np.array([(cols - 1) / 2.0, (rows - 1) / 2.0])
    # pixel-center convention: continuous x maps to index x - 0.5
    offset = (center - 0.5) - linear @ stencil_center
    return np.hstack([linear, offset[:, None]])


def render_scene(spec: SceneSpec, glyphs: GlyphSet, num_points: int, name: str = "scene") -> Scene:
    """Rasterize a scene spec; pure in the spec"""
    image = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    image[:] = spec.background
    instances: List[TextInstanceGT] = []
    scale = np.array([spec.width, spec.height], dtype=np.float64)
    for instance in spec.instances:
        coverage = np.zeros((spec.height, spec.width), dtype=np.float32)
        for ch, (center, angle) in zip(instance.text, glyph_placements(instance)):
            stencil = glyphs.stencil(ch).astype(np.float32)
            matrix = _glyph_matrix(center, angle, instance.glyph_height)
            warped = cv2.warpAffine(stencil, matrix, (spec.width, spec.height), flags=cv2.INTER_LINEAR,
                                    borderMode=cv2.BORDER_CONSTANT, borderValue=0)
            np.maximum(coverage, warped, out=coverage)
        alpha = np.clip(coverage, 0.0, 1.0)[..., None].astype(np.float64)
        image = image * (1.0 - alpha) + np.asarray(instance.color, dtype=np.float64) * alpha
        instances.append(gt_from_polygon(ribbon_polygon(instance) / scale, instance.text, num_points))
    rendered = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return Scene(name=name, image=rendered, instances=instances, seed=spec.seed)


def _random_guide(rng: np.random.Generator, length: float, canvas: int, max_bend: float,
                  clearance: float) -> np.ndarray:
    """Cubic guide of ``length`` arc pixels with bounded bend, placed with ``clearance`` to the border"""
    angle = math.radians(rng.uniform(-MAX_TILT_DEGREES, MAX_TILT_DEGREES))
    direction = np.array([math.cos(angle), math.sin(angle)])
    normal = np.array([-direction[1], direction[0]])
    bends = rng.uniform(-max_bend, max_bend, size=2)
    unit = np.array([
        [0.0, 0.0],
        (1.0 / 3.0) * direction + bends[0] * normal,
        (2.0 / 3.0) * direction + bends[1] * normal,
        direction,
    ])
    guide = unit * (length / guide_length(unit))
    low = clearance - guide.min(axis=0)
    high = canvas - clearance - guide.max(axis=0)
    start = rng.uniform(low, np.maximum(high, low))
    return guide + start


def _inside(polygon: np.ndarray, width: int, height: int, margin: float = 1.0) -> bool:
    return bool(np.all(polygon[:, 0] >= margin) and np.all(polygon[:, 0] <= width - margin)
                and np.all(polygon[:, 1] >= margin) and np.all(polygon[:, 1] <= height - margin))


def _palette(rng: np.random.Generator) -> Tuple[Tuple[int, int, int], Tuple[int, int, int]]:
    """Background and ink with at least ~75 levels of contrast per channel"""
    dark = tuple(int(v) for v in rng.integers(10, 90, size=3))
    light = tuple(int(v) for v in rng.integers(165, 246, size=3))
    return (light, dark) if rng.random() < 0.5 else (dark, light)


def sample_scene_spec(rng: np.random.Generator, cfg: DataConfig, glyphs: GlyphSet,
                      seed: Optional[int] = None) -> SceneSpec:
    """Random non-overlapping instances whose ribbons stay inside the canvas"""
    canvas = cfg.canvas_size
    background, ink = _palette(rng)
    target = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    placed: List[InstanceSpec] = []
    shapes: List[Polygon] = []
    for index in range(target):
        for _ in range(MAX_SCENE_RETRIES):
            count = int(rng.integers(cfg.min_chars, cfg.max_chars + 1))
            text = "".join(rng.choice(list(glyphs.alphabet), size=count))
            height = float(rng.integers(cfg.glyph_height[0], cfg.glyph_height[1] + 1))
            length = count * height * (GLYPH_ASPECT + GLYPH_SPACING)
            if length > canvas - 2 * height:
                continue
            clearance = height / 2.0 + RIBBON_PADDING + 1.0
            candidate = InstanceSpec(guide=_random_guide(rng, length, canvas, cfg.max_bend, clearance), text=text,
                                     glyph_height=height, color=ink)
            outline = ribbon_polygon(candidate)
            if not _inside(outline, canvas, canvas):
                continue
            shape = Polygon(outline)
            if not shape.is_valid or any(shape.buffer(OVERLAP_MARGIN).intersects(other) for other in shapes):
                continue
            placed.append(candidate)
            shapes.append(shape)
            break
        else:
            if len(placed) >= cfg.min_instances:
                logger.debug(f"Stopped at {len(placed)} of {target} instances after {MAX_SCENE_RETRIES} retries")
                break
            raise SceneGenerationError(
                f"could not place instance {index} within {MAX_SCENE_RETRIES} retries on a {canvas}px canvas"
            )
    return SceneSpec(width=canvas, height=canvas, background=background, instances=tuple(placed),
                     seed=0 if seed is None else int(seed))


def scene_seeds(count: int, seed: int) -> List[int]:
    rng = make_rng(seed, "scene-seeds")
    return [child_seed(rng) for _ in range(count)]


def generate_scene(seed: int, cfg: DataConfig, glyphs: GlyphSet, num_points: int, name: str = "scene") -> Scene:
    spec = sample_scene_spec(make_rng(seed, "scene"), cfg, glyphs, seed=seed)
    return render_scene(spec, glyphs, num_points, name=name)


def generate_scenes(count: int, seed: int, cfg: DataConfig, glyphs: GlyphSet, num_points: int,
                    prefix: str = "scene") -> List[Scene]:
    """``count`` scenes, each reproducible from its own derived seed"""
    scenes = [generate_scene(s, cfg, glyphs, num_points, name=f"{prefix}_{i:05d}")
              for i, s in enumerate(scene_seeds(count, seed))]
    logger.info(f"Generated {len(scenes)} synthetic scenes (seed {seed})")
    return scenes


def straight_instance(start: Sequence[float], end: Sequence[float], text: str, glyph_height: float,
                      color=(0, 0, 0)) -> InstanceSpec:
    """Instance on a straight guide from start to end (pixels)"""
    start, end = np.asarray(start, dtype=np.float64), np.asarray(end, dtype=np.float64)
    guide = np.array([start + (end - start) * f for f in (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)])
    return InstanceSpec(guide=guide, text=text, glyph_height=float(glyph_height), color=tuple(color))
