"""
Core interfaces for swapping data and configuration sources
"""
from abc import ABC, abstractmethod
from typing import Any, Dict, List

from app.models.scene import Scene


class ConfigProvider(ABC):
    """Abstract base class for run configuration overrides"""

    @abstractmethod
    def run_overrides(self) -> Dict[str, Any]:
        """Top-level run keys to apply over the config file"""
        pass


class SceneSource(ABC):
    """Abstract base class for anything that yields annotated scenes"""

    @abstractmethod
    def load(self) -> List[Scene]:
        """
        Materialize every scene of the source

        Returns:
            Scenes with images and ground truth in normalized coordinates
        """
        pass

    @abstractmethod
    def describe(self) -> Dict[str, Any]:
        """Provenance of the scenes (kind, seeds, paths)"""
        pass
