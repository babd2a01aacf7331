"""
Data records for the spotter: geometry, scenes, annotations and results.
"""

from .geometry import CubicBezier, TextInstanceGT
from .scene import InstanceSpec, Scene, SceneSpec

__all__ = [
    "CubicBezier",
    "TextInstanceGT",
    "InstanceSpec",
    "Scene",
    "SceneSpec",
]
