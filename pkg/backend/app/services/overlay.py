"""
SVG overlays: the source image embedded as PNG with one path per spotted
instance and its transcript.
"""

import base64
import io
import logging
from pathlib import Path
from typing import Sequence, Tuple, Union
from xml.sax.saxutils import escape, quoteattr

import numpy as np
from PIL import Image

from app.models.results import SpotResult

logger = logging.getLogger(__name__)

VALID_STROKE = "#00c853"
INVALID_STROKE = "#ff1744"


def _path_data(points: Sequence[Tuple[float, float]], closed: bool) -> str:
    parts = [f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}" for i, (x, y) in enumerate(points)]
    return " ".join(parts) + (" Z" if closed else "")


def _embedded_png(image: np.ndarray) -> str:
    buffer = io.BytesIO()
    Image.fromarray(image).save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def render_svg(image: np.ndarray, result: SpotResult, line_mode: bool = False) -> str:
    height, width = image.shape[:2]
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<image width="{width}" height="{height}" href="data:image/png;base64,{_embedded_png(image)}"/>',
    ]
    for instance in result.instances:
        closed = instance.polygon is not None and not line_mode
        points = instance.polygon if closed else instance.center
        stroke = VALID_STROKE if instance.polygon_valid else INVALID_STROKE
        label = f"{instance.transcript} {instance.confidence:.2f}"
        lines.append(f'<path d="{_path_data(points, closed)}" fill="none" stroke="{stroke}" stroke-width="1"/>')
        x, y = points[0]
        lines.append(f'<text x="{x:.2f}" y="{max(y - 2.0, 8.0):.2f}" font-size="8" fill={quoteattr(stroke)}>'
                     f'{escape(label)}</text>')
    lines.append("</svg>")
    return "\n".join(lines)


def write_overlay(image: np.ndarray, result: SpotResult, path: Union[str, Path], line_mode: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(image, result, line_mode))
    logger.debug(f"Overlay written to {path}")
    return path
