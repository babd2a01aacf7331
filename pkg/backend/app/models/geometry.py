"""
Geometry records for text instances.

Coordinates are normalized to [0, 1] relative to the (padded) input canvas,
stored as float64 arrays of shape [n, 2] in reading order.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from app.core.errors import AnnotationError, DomainError


def as_points(points, name: str = "points") -> np.ndarray:
    array = np.asarray(points, dtype=np.float64)
    if array.ndim != 2 or array.shape[1] != 2:
        raise DomainError(f"{name} must have shape [n, 2], got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise DomainError(f"{name} contains non-finite coordinates")
    return array


@dataclass(frozen=True)
class CubicBezier:
    """Four control points p0..p3 ordered along the reading direction"""

    control: np.ndarray

    def __post_init__(self):
        control = as_points(self.control, "control points")
        if control.shape[0] != 4:
            raise DomainError(f"a cubic Bezier needs exactly 4 control points, got {control.shape[0]}")
        object.__setattr__(self, "control", control)

    @property
    def p0(self) -> np.ndarray:
        return self.control[0]

    @property
    def p3(self) -> np.ndarray:
        return self.control[3]

    def reversed(self) -> "CubicBezier":
        return CubicBezier(self.control[::-1].copy())


@dataclass
class TextInstanceGT:
    """Ground truth for one text instance.

    ``top`` and ``bot`` are absent for line annotations. When present they are
    sampled at the same parameters as ``center``. ``sides`` keeps the top and
    bottom curves they were sampled from, when known.
    """

    center: np.ndarray
    transcript: str
    top: Optional[np.ndarray] = None
    bot: Optional[np.ndarray] = None
    polygon: Optional[np.ndarray] = field(default=None, repr=False)
    sides: Optional[Tuple[CubicBezier, CubicBezier]] = field(default=None, repr=False)

    def __post_init__(self):
        try:
            self.center = as_points(self.center, "center")
            if self.top is not None:
                self.top = as_points(self.top, "top")
            if self.bot is not None:
                self.bot = as_points(self.bot, "bot")
            if self.polygon is not None:
                self.polygon = as_points(self.polygon, "polygon")
        except DomainError as e:
            raise AnnotationError(str(e)) from e
        if (self.top is None) != (self.bot is None):
            raise AnnotationError("top and bot must be given together")
        if self.center.shape[0] < 2:
            raise AnnotationError("a text instance needs at least 2 center points")
        if self.top is not None and not (self.top.shape == self.bot.shape == self.center.shape):
            raise AnnotationError(
                f"center/top/bot point counts differ: {self.center.shape[0]}, {self.top.shape[0]}, {self.bot.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.center.shape[0]

    @property
    def has_boundary(self) -> bool:
        return self.top is not None

    def boundary_polygon(self) -> Optional[np.ndarray]:
        """Source polygon when known, else the one implied by the sampled sides"""
        if self.polygon is not None:
            return self.polygon
        if self.top is None:
            return None
        return np.concatenate([self.top, self.bot[::-1]], axis=0)

    def transformed(self, fn) -> "TextInstanceGT":
        """Apply an affine point map to every point set, keeping order"""
        return TextInstanceGT(
            center=fn(self.center),
            transcript=self.transcript,
            top=None if self.top is None else fn(self.top),
            bot=None if self.bot is None else fn(self.bot),
            polygon=None if self.polygon is None else fn(self.polygon),
            sides=None if self.sides is None else tuple(CubicBezier(fn(c.control)) for c in self.sides),
        )
