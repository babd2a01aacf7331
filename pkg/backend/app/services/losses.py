"""
Training objective: decoder set loss per supervised layer plus the encoder
proposal loss.

Focal classification covers every point logit (K x N) with matched queries as
positives. Text, center and boundary terms cover matched queries only. All
terms are normalized by the number of ground-truth instances (at least one).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.config.settings import LossConfig
from app.core.diffmath import DTensor, absolute, log_sigmoid, log_softmax, matmul, power, sigmoid
from app.core.errors import DomainError
from app.models.geometry import TextInstanceGT
from app.models.predictions import ModelOutput, PredictionSet, ProposalSet
from app.services.ctc import ctc_loss
from app.services.geometry import bernstein_matrix
from app.services.glyphs import GlyphSet
from app.services.matching import MatchResult, focal_cost, hungarian, match_predictions

logger = logging.getLogger(__name__)

COMPONENTS = ("l_cls", "l_text", "l_coord", "l_bd", "l_enc")


def sigmoid_focal_loss(logits: DTensor, targets, alpha: float = 0.25, gamma: float = 2.0,
                       mask: Optional[np.ndarray] = None) -> DTensor:
    """Summed binary focal loss; targets are 0/1 with the same shape as logits.

    Entries where ``mask`` is False contribute nothing.
    """
    targets = np.asarray(targets, dtype=logits.dtype)
    if targets.shape != logits.shape:
        raise DomainError(f"focal targets {targets.shape} do not match logits {logits.shape}")
    positive = power(sigmoid(-logits), gamma) * log_sigmoid(logits) * (-alpha)
    negative = power(sigmoid(logits), gamma) * log_sigmoid(-logits) * (-(1.0 - alpha))
    per_entry = positive * targets + negative * (1.0 - targets)
    if mask is not None:
        per_entry = per_entry * np.asarray(mask, dtype=logits.dtype)
    return per_entry.sum()


@dataclass
class LossBreakdown:
    """Differentiable total plus the lambda-weighted components as floats"""

    total: DTensor
    components: Dict[str, float]
    matches: List[MatchResult] = field(default_factory=list, repr=False)
    encoder_match: Optional[MatchResult] = field(default=None, repr=False)

    def as_dict(self) -> Dict[str, float]:
        return {**self.components, "total": float(self.total.item())}


def _zero(dtype) -> DTensor:
    return DTensor(np.zeros(()), dtype=dtype)


class SetCriterion:
    """Matches ground truth to queries and evaluates the weighted losses"""

    def __init__(self, cfg: LossConfig, glyphs: GlyphSet, line_mode: bool = False):
        self.cfg = cfg
        self.glyphs = glyphs
        self.line_mode = line_mode

    @property
    def uses_boundary(self) -> bool:
        return not self.line_mode and self.cfg.bd_weight > 0

    def match(self, gts: Sequence[TextInstanceGT], prediction: PredictionSet) -> MatchResult:
        return match_predictions(gts, prediction, self.cfg, self.glyphs)

    def layer_loss(self, gts: Sequence[TextInstanceGT], prediction: PredictionSet, match: MatchResult
                   ) -> Dict[str, DTensor]:
        """Weighted l_cls, l_text, l_coord and l_bd for one decoder layer"""
        cfg = self.cfg
        dtype = prediction.instance_logits.dtype
        norm = 1.0 / max(len(gts), 1)

        targets = np.zeros(prediction.instance_logits.shape)
        targets[match.query_indices] = 1.0
        terms = {
            "l_cls": sigmoid_focal_loss(prediction.instance_logits, targets, cfg.focal_alpha, cfg.focal_gamma)
            * (cfg.cls_weight * norm),
            "l_text": _zero(dtype),
            "l_coord": _zero(dtype),
            "l_bd": _zero(dtype),
        }
        if not len(match):
            return terms

        gt_idx, query_idx = match.gt_indices, match.query_indices
        if cfg.text_weight > 0:
            log_probs = log_softmax(prediction.char_logits[query_idx], axis=-1)
            text = None
            for row, g in enumerate(gt_idx):
                term = ctc_loss(log_probs[row], self.glyphs.encode(gts[g].transcript))
                text = term if text is None else text + term
            terms["l_text"] = text * (cfg.text_weight * norm)

        centers = np.stack([gts[g].center for g in gt_idx])
        if centers.shape[1:] != prediction.center_points.shape[1:]:
            raise DomainError(f"ground truth has {centers.shape[1]} points, queries have "
                              f"{prediction.center_points.shape[1]}")
        terms["l_coord"] = absolute(prediction.center_points[query_idx] - centers).sum() * (cfg.coord_weight * norm)

        if self.uses_boundary:
            with_bd = [(g, k) for g, k in zip(gt_idx, query_idx) if gts[g].has_boundary]
            if with_bd:
                rows = np.array([k for _, k in with_bd])
                top = np.stack([gts[g].top for g, _ in with_bd])
                bot = np.stack([gts[g].bot for g, _ in with_bd])
                bd = absolute(prediction.top_points[rows] - top).sum() + absolute(prediction.bot_points[rows] - bot).sum()
                terms["l_bd"] = bd * (cfg.bd_weight * norm)
        return terms

    def loss_decoder(self, gts: Sequence[TextInstanceGT], layers: Sequence[PredictionSet],
                     matches: Optional[Sequence[MatchResult]] = None):
        """Sum of layer losses over supervised layers; returns (total, components, matches)"""
        supervised = list(layers) if self.cfg.aux_loss else [layers[-1]]
        if matches is None:
            matches = [self.match(gts, prediction) for prediction in supervised]
        if len(matches) != len(supervised):
            raise DomainError(f"{len(matches)} matches for {len(supervised)} supervised layers")

        sums: Dict[str, DTensor] = {}
        for prediction, match in zip(supervised, matches):
            for name, value in self.layer_loss(gts, prediction, match).items():
                sums[name] = value if name not in sums else sums[name] + value
        total = sums["l_cls"] + sums["l_text"] + sums["l_coord"] + sums["l_bd"]
        return total, {name: float(value.item()) for name, value in sums.items()}, list(matches)

    def sampled_proposals(self, proposals: ProposalSet, num_points: int) -> DTensor:
        """[M, N, 2] points sampled uniformly on every per-pixel proposal curve"""
        return matmul(bernstein_matrix(num_points), proposals.all_curves)

    def match_encoder(self, gts: Sequence[TextInstanceGT], proposals: ProposalSet,
                      sampled: Optional[np.ndarray] = None) -> MatchResult:
        """Hungarian over unpadded proposal pixels with class and sampled-point costs"""
        if not gts:
            return MatchResult({}, 0.0)
        num_points = gts[0].n
        if sampled is None:
            sampled = np.einsum("nj,mjc->mnc", bernstein_matrix(num_points),
                                proposals.all_curves.values.astype(np.float64))
        columns = np.flatnonzero(proposals.valid)
        logits = proposals.all_logits.values.astype(np.float64)[columns]
        probs = 1.0 / (1.0 + np.exp(-logits))
        cls = focal_cost(probs, self.cfg.focal_alpha, self.cfg.focal_gamma)
        coord = np.stack([np.abs(sampled[columns] - gt.center[None]).sum(axis=(1, 2)) for gt in gts])
        cost = self.cfg.cls_weight * np.atleast_1d(cls)[None, :] + self.cfg.coord_weight * coord
        local = hungarian(cost)
        return MatchResult({g: int(columns[k]) for g, k in local.mapping.items()}, local.total)

    def loss_encoder(self, gts: Sequence[TextInstanceGT], proposals: ProposalSet,
                     match: Optional[MatchResult] = None):
        """Weighted encoder loss over all proposal pixels; returns (loss, match)"""
        cfg = self.cfg
        norm = 1.0 / max(len(gts), 1)
        num_points = gts[0].n if gts else 2
        sampled = self.sampled_proposals(proposals, num_points)
        if match is None:
            match = self.match_encoder(gts, proposals, sampled.values.astype(np.float64))

        targets = np.zeros(proposals.all_logits.shape)
        targets[match.query_indices] = 1.0
        # padded pixels are neither positives nor negatives
        cls = sigmoid_focal_loss(proposals.all_logits, targets, cfg.focal_alpha, cfg.focal_gamma,
                                 mask=proposals.valid)
        loss = cls * (cfg.cls_weight * norm)

        if len(match):
            centers = np.stack([gts[g].center for g in match.gt_indices])
            coord = absolute(sampled[match.query_indices] - centers).sum()
            loss = loss + coord * (cfg.coord_weight * norm)
        return loss, match

    def __call__(self, gts: Sequence[TextInstanceGT], output: ModelOutput) -> LossBreakdown:
        decoder, components, matches = self.loss_decoder(gts, output.layers)
        encoder, encoder_match = self.loss_encoder(gts, output.proposals)
        total = total_loss(decoder, encoder)
        components["l_enc"] = float(encoder.item())
        logger.debug(f"loss components {components}")
        return LossBreakdown(total=total, components=components, matches=matches, encoder_match=encoder_match)


def total_loss(decoder: DTensor, encoder: DTensor) -> DTensor:
    return decoder + encoder


def batch_loss(criterion: SetCriterion, samples: Sequence[Sequence[TextInstanceGT]],
               outputs: Sequence[ModelOutput]) -> LossBreakdown:
    """Mean of per-image breakdowns across a batch"""
    if not outputs:
        raise DomainError("empty batch")
    parts = [criterion(gts, output) for gts, output in zip(samples, outputs)]
    total = parts[0].total
    for part in parts[1:]:
        total = total + part.total
    total = total * (1.0 / len(parts))
    components = {name: float(np.mean([part.components[name] for part in parts])) for name in COMPONENTS}
    matches = [m for part in parts for m in part.matches]
    return LossBreakdown(total=total, components=components, matches=matches)
