"""
Pydantic schemas for spotting results written by inference.
"""

from typing import List, Optional, Tuple

from pydantic import BaseModel, Field


class SpotInstance(BaseModel):
    """One spotted text instance in source-image pixels."""
    transcript: str
    confidence: float = Field(..., ge=0.0, le=1.0)
    center: List[Tuple[float, float]]
    polygon: Optional[List[Tuple[float, float]]] = None
    polygon_valid: bool = True


class SpotResult(BaseModel):
    """All instances for one image, highest confidence first."""
    image: str
    width: int
    height: int
    instances: List[SpotInstance] = []


class SpotResults(BaseModel):
    """Results file."""
    checkpoint: str
    threshold: float
    line_mode: bool = False
    results: List[SpotResult] = []
