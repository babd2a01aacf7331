"""
Scene records: rendered images with their ground truth, and the specs that
describe how a synthetic scene is drawn.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.models.geometry import TextInstanceGT


@dataclass(frozen=True)
class InstanceSpec:
    """One text instance to draw: guide curve in pixels, glyphs, look"""

    guide: np.ndarray
    text: str
    glyph_height: float
    color: Tuple[int, int, int]


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    background: Tuple[int, int, int]
    instances: Tuple[InstanceSpec, ...]
    seed: int


@dataclass
class Scene:
    """8-bit RGB image with ground truth in coordinates normalized to it"""

    name: str
    image: np.ndarray
    instances: List[TextInstanceGT] = field(default_factory=list)
    seed: Optional[int] = None
    mask: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    @property
    def transcripts(self) -> List[str]:
        return [gt.transcript for gt in self.instances]
