"""Synthetic scene source backed by the seeded generator"""
import logging
from typing import Any, Dict, List, Optional

from app.config.settings import DataConfig
from app.core.interfaces import SceneSource
from app.models.scene import Scene
from app.services.glyphs import GlyphSet
from app.services.scene_generator import generate_scenes, scene_seeds

logger = logging.getLogger(__name__)


class SyntheticSceneSource(SceneSource):
    """Scenes drawn from the configured generator settings"""

    def __init__(self, data: DataConfig, glyphs: GlyphSet, num_points: int,
                 count: Optional[int] = None, seed: Optional[int] = None, prefix: str = "scene"):
        """
        Initialize synthetic source

        Args:
            data: Generator settings (canvas, instance and glyph ranges)
            glyphs: Glyph set the transcripts are drawn from
            num_points: Points sampled per ground-truth curve
            count: Number of scenes (default data.num_scenes)
            seed: Base seed (default data.seed)
            prefix: Scene name prefix
        """
        self.data = data
        self.glyphs = glyphs
        self.num_points = num_points
        self.count = data.num_scenes if count is None else count
        self.seed = data.seed if seed is None else seed
        self.prefix = prefix

    def load(self) -> List[Scene]:
        return generate_scenes(self.count, self.seed, self.data, self.glyphs, self.num_points, prefix=self.prefix)

    def describe(self) -> Dict[str, Any]:
        return {
            "kind": "synthetic",
            "count": self.count,
            "seed": self.seed,
            "scene_seeds": scene_seeds(self.count, self.seed),
            "canvas_size": self.data.canvas_size,
        }
