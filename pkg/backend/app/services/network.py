"""
Point-query text spotting network.

stem -> deformable encoder -> per-pixel Bezier proposals -> top-K -> N point
queries per proposal -> decoder layers (intra-group, inter-group and
deformable cross attention) -> shared prediction heads after every layer.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from app.config.settings import ModelConfig
from app.core.diffmath import (
    MLP,
    DTensor,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    as_tensor,
    broadcast_to,
    concat,
    get_default_dtype,
    logit,
    relu,
    sigmoid,
    sinusoidal_encoding,
    swapaxes,
)
from app.core.errors import ConfigError
from app.core.seeding import make_rng
from app.models.predictions import (
    FeaturePyramid,
    LayerOutput,
    ModelOutput,
    PredictionSet,
    ProposalSet,
    QueryState,
)
from app.services.attention import MultiHeadAttention, MultiScaleDeformableAttention
from app.services.backbone import ConvStem
from app.services.geometry import bernstein_matrix

logger = logging.getLogger(__name__)

# Focal-loss prior for classification biases
PRIOR_PROBABILITY = 0.01
PRIOR_BIAS = -math.log((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY)


def decode_proposal_curves(offsets: DTensor, anchors) -> DTensor:
    """Control points sigma(offset + logit(anchor)) per pixel.

    offsets [M, 4, 2] in logit space, anchors [M, 2] pixel coordinates
    -> [M, 4, 2] normalized control points.
    """
    anchors = as_tensor(np.asarray(anchors), dtype=offsets.dtype)
    base = logit(anchors).reshape(anchors.shape[0], 1, 2)
    return sigmoid(offsets + base)


class FeedForward(Module):
    def __init__(self, d_model: int, hidden: int, rng: np.random.Generator):
        self.linear1 = Linear(d_model, hidden, rng)
        self.linear2 = Linear(hidden, d_model, rng)

    def __call__(self, x: DTensor) -> DTensor:
        return self.linear2(relu(self.linear1(x)))


class EncoderLayer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.d_model
        self.self_attn = MultiScaleDeformableAttention(d, config.n_heads, config.n_levels, config.n_sample_points, rng)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(d, config.ffn_dim, rng)
        self.norm2 = LayerNorm(d)

    def __call__(self, src: DTensor, pos: DTensor, pyramid: FeaturePyramid, valid: np.ndarray
                 ) -> Tuple[DTensor, np.ndarray]:
        attended, weights = self.self_attn(src + pos, pyramid.all_coords, src, pyramid.shapes,
                                           pyramid.level_starts, valid)
        src = self.norm1(src + attended)
        src = self.norm2(src + self.ffn(src))
        return src, weights


class BezierProposalHead(Module):
    """Per-pixel text score and four control points offset from the pixel location"""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.offsets = MLP(d_model, d_model, 8, 3, rng, zero_last=True)
        self.score = Linear(d_model, 1, rng, bias_value=PRIOR_BIAS)

    def __call__(self, memory: FeaturePyramid, num_proposals: int) -> ProposalSet:
        tokens = memory.tokens
        count = tokens.shape[0]
        if num_proposals > count:
            raise ConfigError(f"num_proposals ({num_proposals}) exceeds the {count} encoder pixels")
        valid = memory.all_valid
        if num_proposals > int(valid.sum()):
            raise ConfigError(f"num_proposals ({num_proposals}) exceeds the {int(valid.sum())} unpadded pixels")

        curves = decode_proposal_curves(self.offsets(tokens).reshape(count, 4, 2), memory.all_coords)
        logits = self.score(tokens).reshape(count)
        scores = 1.0 / (1.0 + np.exp(-logits.values.astype(np.float64)))
        ranking = np.where(valid, -scores, np.inf)
        order = np.argsort(ranking, kind="stable")[:num_proposals]
        return ProposalSet(
            curves=curves.values[order].astype(np.float64),
            scores=scores[order],
            indices=order,
            all_curves=curves,
            all_logits=logits,
            valid=valid,
        )


class QueryInitializer(Module):
    """Point positional queries from sampled coordinates plus learned content queries"""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.d_model = config.d_model
        self.num_points = config.num_points
        self.temperature = config.pe_temperature
        rows = 1 if config.share_point_embeddings else config.num_points
        self.point_embed = Parameter(rng.normal(0.0, 1.0, size=(rows, config.d_model)).astype(get_default_dtype()))
        self.position_mlp = MLP(config.d_model, config.d_model, config.d_model, 2, rng)
        self.bernstein = bernstein_matrix(config.num_points)

    def positional(self, coords: DTensor) -> DTensor:
        return self.position_mlp(sinusoidal_encoding(coords, self.d_model, self.temperature))

    def __call__(self, proposals: ProposalSet) -> QueryState:
        num = len(proposals)
        sampled = np.einsum("nj,kjc->knc", self.bernstein, proposals.curves)
        coords = DTensor(sampled)
        rows = self.point_embed.shape[0]
        content = broadcast_to(self.point_embed.reshape(1, rows, self.d_model), (num, self.num_points, self.d_model))
        return QueryState(coords=coords, content=content, positional=self.positional(coords))


class DecoderLayer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.d_model
        self.intra_attn = MultiHeadAttention(d, config.n_heads, rng)
        self.norm1 = LayerNorm(d)
        self.inter_attn = MultiHeadAttention(d, config.n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.cross_attn = MultiScaleDeformableAttention(d, config.n_heads, config.n_levels, config.n_sample_points, rng)
        self.norm3 = LayerNorm(d)
        self.ffn = FeedForward(d, config.ffn_dim, rng)
        self.norm4 = LayerNorm(d)
        self.coord_offsets = MLP(d, d, 2, 3, rng, zero_last=True)

    def __call__(self, state: QueryState, memory: FeaturePyramid, positional_fn, detach_reference: bool = True
                 ) -> Tuple[QueryState, LayerOutput]:
        num, points = state.shape
        d = state.content.shape[-1]
        content, pos = state.content, state.positional

        # within each instance: queries/keys composite, values content
        composite = content + pos
        tgt = self.norm1(content + self.intra_attn(composite, composite, content))

        # across instances, separately for every point index
        composite = swapaxes(tgt + pos, 0, 1)
        inter = self.inter_attn(composite, composite, swapaxes(tgt, 0, 1))
        tgt = self.norm2(tgt + swapaxes(inter, 0, 1))

        query = (tgt + pos).reshape(num * points, d)
        reference = state.coords.reshape(num * points, 2)
        cross, _ = self.cross_attn(query, reference, memory.tokens, memory.shapes, memory.level_starts,
                                   memory.all_valid)
        tgt = self.norm3(tgt + cross.reshape(num, points, d))
        tgt = self.norm4(tgt + self.ffn(tgt))

        refined = sigmoid(logit(state.coords) + self.coord_offsets(tgt))
        next_coords = refined.detach() if detach_reference else refined
        next_state = QueryState(coords=next_coords, content=tgt, positional=positional_fn(next_coords))
        return next_state, LayerOutput(content=tgt, reference=state.coords, center=refined)


class PredictionHeads(Module):
    def __init__(self, d_model: int, num_classes: int, rng: np.random.Generator):
        self.instance = Linear(d_model, 1, rng, bias_value=PRIOR_BIAS)
        self.characters = Linear(d_model, num_classes, rng)
        self.boundary = MLP(d_model, d_model, 4, 3, rng, zero_last=True)

    def __call__(self, output: LayerOutput) -> PredictionSet:
        num, points, _ = output.content.shape
        offsets = self.boundary(output.content)
        reference = output.reference
        return PredictionSet(
            instance_logits=self.instance(output.content).reshape(num, points),
            char_logits=self.characters(output.content),
            center_points=output.center,
            top_points=reference + offsets[:, :, 0:2],
            bot_points=reference + offsets[:, :, 2:4],
        )


class PointQuerySpotter(Module):
    """The full network; parameters are drawn from a seeded stream"""

    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = make_rng(seed, "model-init")
        self.config = config
        d = config.d_model
        self.backbone = ConvStem(config.stem_channels, config.n_levels, d, rng)
        self.level_embed = Parameter(rng.normal(0.0, 1.0, size=(config.n_levels, d)).astype(get_default_dtype()))
        self.encoder_layers = [EncoderLayer(config, rng) for _ in range(config.n_enc_layers)]
        self.proposal_head = BezierProposalHead(d, rng)
        self.queries = QueryInitializer(config, rng)
        self.decoder_layers = [DecoderLayer(config, rng) for _ in range(config.n_dec_layers)]
        head_count = 1 if config.share_heads else config.n_dec_layers
        self.heads = [PredictionHeads(d, config.vocab_size + 1, rng) for _ in range(head_count)]
        logger.debug(f"PointQuerySpotter with {self.num_parameters()} parameters")

    def backbone_parameters(self) -> List[Parameter]:
        return self.backbone.parameters()

    def transformer_parameters(self) -> List[Parameter]:
        backbone = {id(p) for p in self.backbone.parameters()}
        return [p for p in self.parameters() if id(p) not in backbone]

    def stem_forward(self, image: np.ndarray, mask: Optional[np.ndarray] = None) -> FeaturePyramid:
        return self.backbone(image, mask)

    def encoder_forward(self, pyramid: FeaturePyramid) -> FeaturePyramid:
        d = self.config.d_model
        tokens = concat([m.reshape(m.shape[0] * m.shape[1], d) for m in pyramid.maps], axis=0)
        pos = sinusoidal_encoding(DTensor(pyramid.all_coords), d, self.config.pe_temperature)
        pos = pos + self.level_embed[pyramid.level_ids]
        valid = pyramid.all_valid
        for layer in self.encoder_layers:
            tokens, _ = layer(tokens, pos, pyramid, valid)
        maps = [tokens[start:start + h * w].reshape(h, w, d)
                for (h, w), start in zip(pyramid.shapes, pyramid.level_starts)]
        return FeaturePyramid(maps=maps, coords=pyramid.coords, valid=pyramid.valid,
                              canvas=pyramid.canvas, tokens=tokens)

    def propose(self, memory: FeaturePyramid) -> ProposalSet:
        return self.proposal_head(memory, self.config.num_proposals)

    def init_queries(self, proposals: ProposalSet) -> QueryState:
        return self.queries(proposals)

    def decoder_layer(self, index: int, state: QueryState, memory: FeaturePyramid
                      ) -> Tuple[QueryState, LayerOutput]:
        return self.decoder_layers[index](state, memory, self.queries.positional, self.config.detach_reference)

    def heads_forward(self, output: LayerOutput, index: int = 0) -> PredictionSet:
        return self.heads[index if len(self.heads) > 1 else 0](output)

    def decode(self, state: QueryState, memory: FeaturePyramid) -> List[PredictionSet]:
        predictions = []
        for index in range(len(self.decoder_layers)):
            state, output = self.decoder_layer(index, state, memory)
            predictions.append(self.heads_forward(output, index))
        return predictions

    def forward(self, image: np.ndarray, mask: Optional[np.ndarray] = None) -> ModelOutput:
        memory = self.encoder_forward(self.stem_forward(image, mask))
        proposals = self.propose(memory)
        state = self.init_queries(proposals)
        return ModelOutput(proposals=proposals, layers=self.decode(state, memory))

    __call__ = forward
