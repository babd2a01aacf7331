"""
Tensors flowing through the spotting network.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.core.diffmath import DTensor


def probabilities(logits: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(logits))
    return np.where(logits >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class FeaturePyramid:
    """Per-level maps [H_l, W_l, d] with pixel-center coordinates and validity.

    ``tokens`` is the level-major flattening of all maps, [sum H_l W_l, d].
    """

    maps: List[DTensor]
    coords: List[np.ndarray]
    valid: List[np.ndarray]
    canvas: Tuple[int, int]
    tokens: Optional[DTensor] = None

    @property
    def shapes(self) -> List[Tuple[int, int]]:
        return [(m.shape[0], m.shape[1]) for m in self.maps]

    @property
    def level_starts(self) -> List[int]:
        sizes = [h * w for h, w in self.shapes]
        return [int(s) for s in np.concatenate([[0], np.cumsum(sizes)[:-1]])]

    @property
    def num_tokens(self) -> int:
        return sum(h * w for h, w in self.shapes)

    @property
    def all_coords(self) -> np.ndarray:
        return np.concatenate(self.coords, axis=0)

    @property
    def all_valid(self) -> np.ndarray:
        return np.concatenate(self.valid, axis=0)

    @property
    def level_ids(self) -> np.ndarray:
        return np.concatenate([np.full(h * w, level) for level, (h, w) in enumerate(self.shapes)])


@dataclass
class ProposalSet:
    """Top-K Bezier proposals; the dense per-pixel tensors feed the encoder loss"""

    curves: np.ndarray
    scores: np.ndarray
    indices: np.ndarray
    all_curves: DTensor = field(repr=False)
    all_logits: DTensor = field(repr=False)
    valid: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.indices)

    def permuted(self, order) -> "ProposalSet":
        order = np.asarray(order)
        return ProposalSet(self.curves[order], self.scores[order], self.indices[order],
                           self.all_curves, self.all_logits, self.valid)


@dataclass
class QueryState:
    """K x N point queries: reference coordinates plus content and positional embeddings"""

    coords: DTensor
    content: DTensor
    positional: DTensor

    @property
    def composite(self) -> DTensor:
        return self.content + self.positional

    @property
    def shape(self) -> Tuple[int, int]:
        return self.coords.shape[0], self.coords.shape[1]


@dataclass
class LayerOutput:
    """What one decoder layer hands to the prediction heads"""

    content: DTensor
    reference: DTensor
    center: DTensor


@dataclass
class PredictionSet:
    instance_logits: DTensor
    char_logits: DTensor
    center_points: DTensor
    top_points: DTensor
    bot_points: DTensor

    @property
    def num_queries(self) -> int:
        return self.instance_logits.shape[0]

    def point_probabilities(self) -> np.ndarray:
        return probabilities(self.instance_logits.values.astype(np.float64))

    def instance_scores(self) -> np.ndarray:
        """Confidence per query: mean of its N point probabilities"""
        return self.point_probabilities().mean(axis=1)


@dataclass
class ModelOutput:
    proposals: ProposalSet
    layers: List[PredictionSet]

    @property
    def final(self) -> PredictionSet:
        return self.layers[-1]
