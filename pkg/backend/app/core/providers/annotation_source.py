"""Annotation-file scene source"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from app.core.interfaces import SceneSource
from app.models.scene import Scene
from app.services.dataset import load_annotations
from app.services.glyphs import GlyphSet

logger = logging.getLogger(__name__)


class AnnotationSceneSource(SceneSource):
    """Scenes read from an annotation JSON and its images"""

    def __init__(self, path: Union[str, Path], glyphs: GlyphSet, num_points: int,
                 image_root: Optional[Union[str, Path]] = None):
        self.path = Path(path)
        self.glyphs = glyphs
        self.num_points = num_points
        self.image_root = image_root

    def load(self) -> List[Scene]:
        return load_annotations(self.path, self.glyphs, self.num_points, self.image_root)

    def describe(self) -> Dict[str, Any]:
        return {
            "kind": "annotations",
            "path": str(self.path),
            "image_root": str(self.image_root) if self.image_root else str(self.path.parent),
        }
