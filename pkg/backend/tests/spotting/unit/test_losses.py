"""
Unit tests for the focal loss, the decoder set loss and the encoder proposal loss.
"""

import numpy as np
import pytest

from app.config.settings import LossConfig
from app.core.diffmath import DTensor, Tape
from app.core.errors import DomainError
from app.models.geometry import CubicBezier, TextInstanceGT
from app.models.predictions import PredictionSet, ProposalSet
from app.services.ctc import ctc_forward
from app.services.geometry import sample_uniform
from app.services.losses import COMPONENTS, SetCriterion, batch_loss, sigmoid_focal_loss, total_loss
from app.services.matching import MatchResult, log_softmax_np
from app.services.network import PointQuerySpotter


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _focal_oracle(logits, targets, alpha=0.25, gamma=2.0):
    p = _sigmoid(logits)
    positive = -alpha * (1 - p) ** gamma * np.log(p)
    negative = -(1 - alpha) * p ** gamma * np.log(1 - p)
    return np.where(targets == 1, positive, negative)


def _line(y, n=5):
    return np.column_stack([np.linspace(0.1, 0.9, n), np.full(n, y)])


def _gt(y=0.5, transcript="AC", n=5):
    return TextInstanceGT(center=_line(y, n), transcript=transcript, top=_line(y - 0.05, n), bot=_line(y + 0.05, n))


def _prediction(centers, instance_logits, char_logits, top=None, bot=None, requires_grad=False) -> PredictionSet:
    centers = np.asarray(centers, dtype=np.float64)
    top = centers if top is None else top
    bot = centers if bot is None else bot
    return PredictionSet(
        DTensor(instance_logits, requires_grad=requires_grad),
        DTensor(char_logits, requires_grad=requires_grad),
        DTensor(centers, requires_grad=requires_grad),
        DTensor(top, requires_grad=requires_grad),
        DTensor(bot, requires_grad=requires_grad),
    )


def _perfect(glyphs, gt):
    """Three queries; query 1 reproduces the ground truth with confident logits"""
    a, c = glyphs.encode("A")[0], glyphs.encode("C")[0]
    centers = np.stack([_line(0.1), gt.center, _line(0.9)])
    top = np.stack([_line(0.1), gt.top, _line(0.9)])
    bot = np.stack([_line(0.1), gt.bot, _line(0.9)])
    instance_logits = np.full((3, 5), -20.0)
    instance_logits[1] = 20.0
    char_logits = np.zeros((3, 5, 5))
    for t, cls in enumerate([a, a, 0, c, c]):
        char_logits[1, t, cls] = 20.0
    return _prediction(centers, instance_logits, char_logits, top, bot)


def _proposals(curves, logits, valid=None) -> ProposalSet:
    curves = np.asarray(curves, dtype=np.float64)
    valid = np.ones(len(curves), dtype=bool) if valid is None else valid
    return ProposalSet(curves=curves[:1], scores=np.zeros(1), indices=np.zeros(1, dtype=np.int64),
                       all_curves=DTensor(curves), all_logits=DTensor(np.asarray(logits, dtype=np.float64)),
                       valid=valid)


@pytest.mark.unit
def test_sigmoid_focal_loss_matches_oracle(rng):
    logits = rng.normal(size=(4, 5)) * 3
    targets = (rng.uniform(size=(4, 5)) < 0.3).astype(float)
    loss = sigmoid_focal_loss(DTensor(logits), targets)
    assert loss.item() == pytest.approx(_focal_oracle(logits, targets).sum(), rel=1e-10)

    mask = rng.uniform(size=(4, 5)) < 0.5
    masked = sigmoid_focal_loss(DTensor(logits), targets, mask=mask)
    assert masked.item() == pytest.approx((_focal_oracle(logits, targets) * mask).sum(), rel=1e-10)

    with pytest.raises(DomainError):
        sigmoid_focal_loss(DTensor(logits), targets[:, :4])


@pytest.mark.unit
def test_perfect_prediction_has_near_zero_loss(glyphs):
    gt = _gt()
    prediction = _perfect(glyphs, gt)
    criterion = SetCriterion(LossConfig(), glyphs)
    total, components, matches = criterion.loss_decoder([gt], [prediction, prediction])
    assert [m.mapping for m in matches] == [{0: 1}, {0: 1}]
    for name in ("l_cls", "l_text", "l_coord", "l_bd"):
        assert components[name] < 1e-6, name
    assert total.item() < 1e-6


@pytest.mark.unit
def test_single_pair_by_hand(glyphs):
    cfg = LossConfig()
    gt = TextInstanceGT(center=[[0.2, 0.5], [0.8, 0.5]], transcript="A",
                        top=[[0.2, 0.45], [0.8, 0.45]], bot=[[0.2, 0.55], [0.8, 0.55]])
    logits = np.array([[0.3, -0.2]])
    char_logits = np.array([[[0.1, 0.5, -0.3, 0.0, 0.2], [0.4, -0.1, 0.3, 0.2, 0.0]]])
    centers = np.array([[[0.25, 0.52], [0.7, 0.49]]])
    top = np.array([[[0.2, 0.40], [0.8, 0.47]]])
    bot = np.array([[[0.21, 0.55], [0.8, 0.6]]])
    prediction = _prediction(centers, logits, char_logits, top, bot)

    terms = SetCriterion(cfg, glyphs).layer_loss([gt], prediction, MatchResult({0: 0}, 0.0))
    assert terms["l_cls"].item() == pytest.approx(cfg.cls_weight * _focal_oracle(logits, np.ones_like(logits)).sum())
    assert terms["l_text"].item() == pytest.approx(
        cfg.text_weight * ctc_forward(glyphs.encode("A"), log_softmax_np(char_logits[0])))
    assert terms["l_coord"].item() == pytest.approx(cfg.coord_weight * np.abs(centers[0] - gt.center).sum())
    assert terms["l_bd"].item() == pytest.approx(
        cfg.bd_weight * (np.abs(top[0] - gt.top).sum() + np.abs(bot[0] - gt.bot).sum()))


@pytest.mark.unit
def test_loss_invariant_to_query_order(glyphs, rng):
    gt = _gt()
    centers = rng.uniform(size=(3, 5, 2))
    logits = rng.normal(size=(3, 5))
    char_logits = rng.normal(size=(3, 5, 5))
    order = np.array([2, 0, 1])
    criterion = SetCriterion(LossConfig(), glyphs)

    base = criterion.layer_loss([gt], _prediction(centers, logits, char_logits), MatchResult({0: 2}, 0.0))
    permuted = criterion.layer_loss([gt], _prediction(centers[order], logits[order], char_logits[order]),
                                    MatchResult({0: 0}, 0.0))
    for name in base:
        assert permuted[name].item() == pytest.approx(base[name].item(), abs=1e-12)


@pytest.mark.unit
def test_zero_boundary_weight_gives_no_boundary_gradient(glyphs, rng):
    gt = _gt()
    prediction = _prediction(rng.uniform(size=(2, 5, 2)), rng.normal(size=(2, 5)), rng.normal(size=(2, 5, 5)),
                             rng.uniform(size=(2, 5, 2)), rng.uniform(size=(2, 5, 2)), requires_grad=True)
    criterion = SetCriterion(LossConfig(bd_weight=0.0), glyphs)
    assert not criterion.uses_boundary
    with Tape() as tape:
        total, components, _ = criterion.loss_decoder([gt], [prediction])
        tape.backward(total)
    assert components["l_bd"] == 0.0
    assert prediction.top_points.grad is None and prediction.bot_points.grad is None
    assert prediction.center_points.grad is not None


@pytest.mark.unit
def test_line_mode_skips_boundary(glyphs):
    assert not SetCriterion(LossConfig(), glyphs, line_mode=True).uses_boundary
    assert SetCriterion(LossConfig(), glyphs).uses_boundary


@pytest.mark.unit
def test_final_layer_only_without_aux_loss(glyphs):
    gt = _gt()
    prediction = _perfect(glyphs, gt)
    _, _, matches = SetCriterion(LossConfig(aux_loss=False), glyphs).loss_decoder([gt], [prediction] * 3)
    assert len(matches) == 1


@pytest.mark.unit
def test_no_ground_truth_only_classification(glyphs, rng):
    prediction = _prediction(rng.uniform(size=(2, 5, 2)), rng.normal(size=(2, 5)), rng.normal(size=(2, 5, 5)))
    total, components, matches = SetCriterion(LossConfig(), glyphs).loss_decoder([], [prediction])
    assert matches[0].mapping == {}
    assert components["l_text"] == components["l_coord"] == components["l_bd"] == 0.0
    assert total.item() == pytest.approx(components["l_cls"])


@pytest.mark.unit
def test_encoder_loss_zero_for_exact_proposal(glyphs, rng):
    curves = rng.uniform(0.1, 0.9, size=(6, 4, 2))
    gt = TextInstanceGT(center=sample_uniform(CubicBezier(curves[3]), 5), transcript="AC")
    criterion = SetCriterion(LossConfig(cls_weight=0.0), glyphs)
    loss, match = criterion.loss_encoder([gt], _proposals(curves, rng.normal(size=6)))
    assert match.mapping == {0: 3}
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.unit
def test_encoder_coordinate_term_matches_oracle(glyphs, rng):
    curves = rng.uniform(0.1, 0.9, size=(6, 4, 2))
    gts = [_gt(0.3), _gt(0.7, "CA")]
    cfg = LossConfig(cls_weight=0.0, coord_weight=2.0)
    loss, match = SetCriterion(cfg, glyphs).loss_encoder(gts, _proposals(curves, np.zeros(6)))
    expected = sum(np.abs(sample_uniform(CubicBezier(curves[k]), 5) - gts[g].center).sum()
                   for g, k in match.mapping.items())
    assert loss.item() == pytest.approx(cfg.coord_weight * expected / len(gts), abs=1e-12)


@pytest.mark.unit
def test_encoder_never_matches_padding(glyphs, rng):
    curves = rng.uniform(0.1, 0.9, size=(6, 4, 2))
    gt = TextInstanceGT(center=sample_uniform(CubicBezier(curves[3]), 5), transcript="AC")
    valid = np.ones(6, dtype=bool)
    valid[3] = False
    _, match = SetCriterion(LossConfig(), glyphs).loss_encoder([gt], _proposals(curves, np.zeros(6), valid))
    assert 3 not in match.image


@pytest.mark.unit
def test_total_loss_with_zero_encoder():
    decoder = DTensor(1.25)
    assert total_loss(decoder, DTensor(0.0)).item() == 1.25


@pytest.mark.unit
def test_criterion_on_model_output(glyphs, toy_model_config, tiny_scenes):
    model = PointQuerySpotter(toy_model_config, seed=0)
    criterion = SetCriterion(LossConfig(), glyphs)
    outputs = [model(scene.image) for scene in tiny_scenes]
    breakdowns = [criterion(scene.instances, output) for scene, output in zip(tiny_scenes, outputs)]
    for breakdown in breakdowns:
        assert set(breakdown.components) == set(COMPONENTS)
        assert breakdown.total.item() == pytest.approx(sum(breakdown.components.values()), rel=1e-9)
        assert all(np.isfinite(v) for v in breakdown.components.values())
        assert len(breakdown.matches) == toy_model_config.n_dec_layers

    batch = batch_loss(criterion, [scene.instances for scene in tiny_scenes], outputs)
    expected = np.mean([b.total.item() for b in breakdowns])
    assert batch.total.item() == pytest.approx(expected, rel=1e-9)
    assert batch.as_dict()["total"] == pytest.approx(expected, rel=1e-9)

    with pytest.raises(DomainError):
        batch_loss(criterion, [], [])
