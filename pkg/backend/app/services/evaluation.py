"""
Spotting Evaluation Service
Detection P/R/F1 at a polygon-IoU threshold, end-to-end None/Full scores and
the line-annotation protocol.

All protocols match greedily in descending confidence order, one prediction
to at most one ground truth. Predictions and ground truth must share a
coordinate frame.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import editdistance
import numpy as np
from shapely.geometry import Point, Polygon

from app.core.errors import ConfigError, DataError
from app.models.geometry import TextInstanceGT

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass
class Prediction:
    """One spotted instance as seen by the evaluators"""

    polygon: Optional[np.ndarray]
    center: np.ndarray
    transcript: str
    confidence: float


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    invalid: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> Dict[str, float]:
        return {**asdict(self), "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class E2EMetrics:
    none: Metrics
    full: Metrics
    corrections: Dict[str, str] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {"none": self.none.to_dict(), "full": self.full.to_dict()}


def _shape(points) -> Optional[Polygon]:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 3 or not np.all(np.isfinite(pts)):
        return None
    shape = Polygon(pts)
    return shape if shape.is_valid and shape.area > 0 else None


def polygon_iou(a, b) -> float:
    """Intersection over union of two simple polygons; 0 when either is invalid"""
    pa, pb = _shape(a), _shape(b)
    if pa is None or pb is None:
        return 0.0
    union = pa.union(pb).area
    return float(pa.intersection(pb).area / union) if union > 0 else 0.0


def polyline_midpoint(points) -> np.ndarray:
    """Point halfway along a polyline by arc length"""
    pts = np.asarray(points, dtype=np.float64)
    lengths = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(lengths)])
    if arc[-1] == 0.0:
        return pts[0].copy()
    half = arc[-1] / 2.0
    return np.array([np.interp(half, arc, pts[:, 0]), np.interp(half, arc, pts[:, 1])])


def _order(preds: Sequence[Prediction]) -> List[int]:
    return sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))


def _gt_polygons(gts: Sequence[TextInstanceGT]) -> List[np.ndarray]:
    polygons = []
    for gt in gts:
        polygon = gt.boundary_polygon()
        if polygon is None:
            raise DataError("evaluation needs ground-truth polygons; line-only annotations have none")
        polygons.append(polygon)
    return polygons


def match_detections(preds: Sequence[Prediction], gts: Sequence[TextInstanceGT],
                     iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> Tuple[List[Tuple[int, int]], int]:
    """Greedy one-to-one matching for one image; returns ((pred, gt) pairs, invalid prediction count)"""
    gt_polygons = _gt_polygons(gts)
    taken = set()
    pairs, invalid = [], 0
    for i in _order(preds):
        if preds[i].polygon is None or _shape(preds[i].polygon) is None:
            invalid += 1
            continue
        best, best_iou = None, iou_threshold
        for g, polygon in enumerate(gt_polygons):
            if g in taken:
                continue
            iou = polygon_iou(preds[i].polygon, polygon)
            if iou >= best_iou and (best is None or iou > best_iou):
                best, best_iou = g, iou
        if best is not None:
            taken.add(best)
            pairs.append((i, best))
    return pairs, invalid


def _check_lengths(preds, gts) -> None:
    if len(preds) != len(gts):
        raise DataError(f"{len(preds)} prediction lists for {len(gts)} images")


def eval_detection(preds: Sequence[Sequence[Prediction]], gts: Sequence[Sequence[TextInstanceGT]],
                   iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> Metrics:
    """Detection counts over images; inputs are per-image lists"""
    _check_lengths(preds, gts)
    tp = fp = fn = invalid = 0
    for image_preds, image_gts in zip(preds, gts):
        pairs, bad = match_detections(image_preds, image_gts, iou_threshold)
        tp += len(pairs)
        fp += len(image_preds) - len(pairs)
        fn += len(image_gts) - len(pairs)
        invalid += bad
    if invalid:
        logger.warning(f"{invalid} predicted polygons were invalid and counted as misses")
    return Metrics(tp=tp, fp=fp, fn=fn, invalid=invalid)


def nearest_word(word: str, lexicon: Sequence[str]) -> str:
    """Lexicon entry at the smallest edit distance; ties go to the lexicographically smallest"""
    if not lexicon:
        raise ConfigError("lexicon is empty")
    folded = word.casefold()
    return min(lexicon, key=lambda w: (editdistance.eval(folded, w.casefold()), w.casefold(), w))


def _same(a: str, b: str) -> bool:
    return a.casefold() == b.casefold()


def eval_e2e(preds: Sequence[Sequence[Prediction]], gts: Sequence[Sequence[TextInstanceGT]],
             lexicon: Optional[Sequence[str]] = None,
             iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> E2EMetrics:
    """
    End-to-end F1 without (None) and with (Full) lexicon correction

    Args:
        preds: Per-image predictions
        gts: Per-image ground truth
        lexicon: Words for Full; None means every ground-truth word of the set
        iou_threshold: Detection gate

    Raises:
        ConfigError: lexicon given but empty
    """
    _check_lengths(preds, gts)
    if lexicon is None:
        # no ground-truth words means no matched pairs to correct
        lexicon = sorted({gt.transcript for image in gts for gt in image})
    else:
        lexicon = list(lexicon)
        if not lexicon:
            raise ConfigError("Full evaluation needs a non-empty lexicon")

    num_preds = sum(len(p) for p in preds)
    num_gts = sum(len(g) for g in gts)
    none_tp = full_tp = invalid = 0
    corrections: Dict[str, str] = {}
    for image_preds, image_gts in zip(preds, gts):
        pairs, bad = match_detections(image_preds, image_gts, iou_threshold)
        invalid += bad
        for i, g in pairs:
            predicted, truth = image_preds[i].transcript, image_gts[g].transcript
            if _same(predicted, truth):
                none_tp += 1
            corrected = corrections.setdefault(predicted, nearest_word(predicted, lexicon))
            if _same(corrected, truth):
                full_tp += 1
    return E2EMetrics(
        none=Metrics(tp=none_tp, fp=num_preds - none_tp, fn=num_gts - none_tp, invalid=invalid),
        full=Metrics(tp=full_tp, fp=num_preds - full_tp, fn=num_gts - full_tp, invalid=invalid),
        corrections=corrections,
    )


def eval_line_protocol(preds: Sequence[Sequence[Prediction]], gts: Sequence[Sequence[TextInstanceGT]]) -> Metrics:
    """None score where a hit means the predicted center line's midpoint lies in an unmatched GT polygon"""
    _check_lengths(preds, gts)
    tp = 0
    num_preds = sum(len(p) for p in preds)
    num_gts = sum(len(g) for g in gts)
    for image_preds, image_gts in zip(preds, gts):
        shapes = [_shape(polygon) for polygon in _gt_polygons(image_gts)]
        taken = set()
        for i in _order(image_preds):
            midpoint = Point(*polyline_midpoint(image_preds[i].center))
            for g, shape in enumerate(shapes):
                if g in taken or shape is None or not shape.covers(midpoint):
                    continue
                taken.add(g)
                if _same(image_preds[i].transcript, image_gts[g].transcript):
                    tp += 1
                break
    return Metrics(tp=tp, fp=num_preds - tp, fn=num_gts - tp)


def threshold_sweep(preds: Sequence[Sequence[Prediction]], gts: Sequence[Sequence[TextInstanceGT]],
                    thresholds: Sequence[float], iou_threshold: float = DEFAULT_IOU_THRESHOLD
                    ) -> List[Tuple[float, Metrics]]:
    """Detection metrics keeping only predictions with confidence >= each threshold"""
    sweep = []
    for threshold in sorted(thresholds):
        kept = [[p for p in image if p.confidence >= threshold] for image in preds]
        sweep.append((float(threshold), eval_detection(kept, gts, iou_threshold)))
    return sweep
