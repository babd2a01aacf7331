"""
Bipartite matching between ground-truth instances and queries.

Costs are built from detached prediction values; the optimal assignment
comes from scipy's linear_sum_assignment, and among equally optimal
assignments the lexicographically smallest mapping is returned.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from app.config.settings import LossConfig
from app.core.errors import CTCInfeasibleError, DomainError, MatchingError
from app.models.geometry import TextInstanceGT
from app.models.predictions import PredictionSet
from app.services.ctc import ctc_forward
from app.services.glyphs import GlyphSet

logger = logging.getLogger(__name__)

FOCAL_EPS = 1e-8


def focal_cost(prob, alpha: float = 0.25, gamma: float = 2.0):
    """Positive minus negative focal term; decreasing in prob"""
    p = np.clip(np.asarray(prob, dtype=np.float64), FOCAL_EPS, 1.0 - FOCAL_EPS)
    positive = -alpha * (1.0 - p) ** gamma * np.log(p)
    negative = -(1.0 - alpha) * p ** gamma * np.log(1.0 - p)
    cost = positive - negative
    return float(cost) if cost.ndim == 0 else cost


def coord_cost(gt, pred) -> float:
    """Sum of L1 distances between corresponding points"""
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise DomainError(f"point sequences differ in shape: {gt.shape} vs {pred.shape}")
    return float(np.sum(np.abs(gt - pred)))


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def text_cost(labels: Sequence[int], log_probs: np.ndarray, penalty: float) -> float:
    try:
        return ctc_forward(labels, log_probs)
    except CTCInfeasibleError:
        return penalty


@dataclass
class CostMatrix:
    values: np.ndarray
    components: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass
class MatchResult:
    """Injective map from ground-truth index to query index"""

    mapping: Dict[int, int]
    total: float

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return sorted(self.mapping.items())

    @property
    def image(self) -> set:
        return set(self.mapping.values())

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for g, _ in self.pairs], dtype=np.int64)

    @property
    def query_indices(self) -> np.ndarray:
        return np.array([k for _, k in self.pairs], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.mapping)


def build_cost_matrix(gts: Sequence[TextInstanceGT], prediction: PredictionSet, cfg: LossConfig,
                      glyphs: GlyphSet) -> CostMatrix:
    num_gt, num_queries = len(gts), prediction.num_queries
    if num_gt > num_queries:
        raise MatchingError(f"{num_gt} ground-truth instances exceed {num_queries} queries")
    if num_gt == 0:
        return CostMatrix(np.zeros((0, num_queries)))

    cls = np.broadcast_to(focal_cost(prediction.instance_scores(), cfg.focal_alpha, cfg.focal_gamma),
                          (num_gt, num_queries))
    centers = prediction.center_points.values.astype(np.float64)
    coord = np.stack([np.abs(centers - gt.center[None]).sum(axis=(1, 2)) for gt in gts])

    text = np.zeros((num_gt, num_queries))
    text_weight = cfg.text_weight if cfg.match_text else 0.0
    if text_weight > 0:
        log_probs = log_softmax_np(prediction.char_logits.values.astype(np.float64))
        for g, gt in enumerate(gts):
            labels = glyphs.encode(gt.transcript)
            text[g] = [text_cost(labels, log_probs[k], cfg.ctc_penalty) for k in range(num_queries)]

    values = cfg.cls_weight * cls + text_weight * text + cfg.coord_weight * coord
    return CostMatrix(values, {"cls": np.array(cls), "text": text, "coord": coord})


def _optimal_total(values: np.ndarray) -> float:
    if values.shape[0] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(values)
    return float(values[rows, cols].sum())


def hungarian(cost) -> MatchResult:
    """Minimum-cost injective assignment of rows to columns.

    Ties between optimal assignments resolve to the lexicographically
    smallest mapping: rows are fixed in order, each to the lowest column that
    still admits an optimal completion.
    """
    values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if values.ndim != 2:
        raise MatchingError(f"cost matrix must be 2-D, got shape {values.shape}")
    num_rows, num_cols = values.shape
    if num_rows > num_cols:
        raise MatchingError(f"{num_rows} ground-truth instances exceed {num_cols} queries")
    if not np.all(np.isfinite(values)):
        raise MatchingError("cost matrix has non-finite entries")
    if num_rows == 0:
        return MatchResult({}, 0.0)

    best = _optimal_total(values)
    tolerance = 1e-9 * max(1.0, abs(best))
    mapping: Dict[int, int] = {}
    free = list(range(num_cols))
    fixed = 0.0
    for row in range(num_rows):
        later_rows = np.arange(row + 1, num_rows)
        for col in free:
            others = [c for c in free if c != col]
            rest = _optimal_total(values[np.ix_(later_rows, others)]) if len(later_rows) else 0.0
            if fixed + values[row, col] + rest <= best + tolerance:
                mapping[row] = col
                fixed += values[row, col]
                free.remove(col)
                break
        else:
            raise MatchingError(f"no optimal completion found for row {row}")

    total = sum(float(values[g, k]) for g, k in sorted(mapping.items()))
    return MatchResult(mapping, total)


def match_predictions(gts: Sequence[TextInstanceGT], prediction: PredictionSet, cfg: LossConfig,
                      glyphs: GlyphSet) -> MatchResult:
    return hungarian(build_cost_matrix(gts, prediction, cfg, glyphs))
