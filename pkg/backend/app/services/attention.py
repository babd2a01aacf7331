"""
Attention blocks: dense multi-head attention and multi-scale deformable attention.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.diffmath import (
    DTensor,
    Linear,
    Module,
    Parameter,
    as_tensor,
    bilinear_sample,
    softmax,
    transpose,
)
from app.core.errors import ShapeError


class MultiHeadAttention(Module):
    """Scaled dot-product attention over the second-to-last axis, batched over leading axes"""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ShapeError("MultiHeadAttention", [(d_model,), (n_heads,)], "d_model not divisible by heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)

    def _split(self, x: DTensor) -> DTensor:
        batch, length, _ = x.shape
        head_dim = self.d_model // self.n_heads
        return transpose(x.reshape(batch, length, self.n_heads, head_dim), (0, 2, 1, 3))

    def __call__(self, query: DTensor, key: DTensor, value: DTensor) -> DTensor:
        """query/key/value [B, L, d] -> [B, L, d]"""
        batch, length, _ = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        scores = (q @ transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.d_model // self.n_heads))
        weights = softmax(scores, axis=-1)
        merged = transpose(weights @ v, (0, 2, 1, 3)).reshape(batch, length, self.d_model)
        return self.out_proj(merged)


class MultiScaleDeformableAttention(Module):
    """Each query reads n_points bilinear samples per head per level around its reference.

    Sampling offsets are in units of the level's pixels; attention weights are
    softmax-normalized jointly over levels and points for each head.
    """

    def __init__(self, d_model: int, n_heads: int, n_levels: int, n_points: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ShapeError("MultiScaleDeformableAttention", [(d_model,), (n_heads,)])
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_levels = n_levels
        self.n_points = n_points
        self.sampling_offsets = Linear(d_model, n_heads * n_levels * n_points * 2, rng, zero_init=True)
        self.sampling_offsets.bias = Parameter(self._grid_bias())
        self.attention_weights = Linear(d_model, n_heads * n_levels * n_points, rng, zero_init=True)
        self.value_proj = Linear(d_model, d_model, rng)
        self.output_proj = Linear(d_model, d_model, rng)

    def _grid_bias(self) -> np.ndarray:
        # heads look in evenly spread directions, points step outward
        thetas = np.arange(self.n_heads) * (2.0 * math.pi / self.n_heads)
        grid = np.stack([np.cos(thetas), np.sin(thetas)], axis=-1)
        grid = grid / np.abs(grid).max(axis=-1, keepdims=True)
        grid = np.tile(grid[:, None, None, :], (1, self.n_levels, self.n_points, 1))
        grid *= np.arange(1, self.n_points + 1)[None, None, :, None]
        return grid.reshape(-1)

    def __call__(self, query: DTensor, reference, value_input: DTensor, shapes: Sequence[Tuple[int, int]],
                 starts: Sequence[int], value_mask: Optional[np.ndarray] = None) -> Tuple[DTensor, np.ndarray]:
        """
        Args:
            query: [Q, d]
            reference: [Q, 2] normalized reference points
            value_input: [M, d] flattened multi-level features
            shapes: (H_l, W_l) per level
            starts: offset of each level in the flattened features
            value_mask: [M] bool, False rows read as zeros

        Returns:
            ([Q, d] output, [Q, heads, levels, points] attention weights)
        """
        if len(shapes) != self.n_levels:
            raise ShapeError("deformable_attention", [(len(shapes),), (self.n_levels,)], "level count")
        num_queries = query.shape[0]
        heads, levels, points = self.n_heads, self.n_levels, self.n_points
        head_dim = self.d_model // heads

        value = self.value_proj(value_input)
        if value_mask is not None:
            value = value * value_mask.astype(value.dtype)[:, None]

        offsets = self.sampling_offsets(query).reshape(num_queries, heads, levels, points, 2)
        logits = self.attention_weights(query).reshape(num_queries, heads, levels * points)
        weights = softmax(logits, axis=-1).reshape(num_queries, heads, levels, points)

        normalizer = np.array([[w, h] for h, w in shapes], dtype=query.dtype)
        reference = as_tensor(reference, dtype=query.dtype).reshape(num_queries, 1, 1, 1, 2)
        locations = reference + offsets * (1.0 / normalizer)[None, None, :, None, :]

        total = None
        for level, (h, w) in enumerate(shapes):
            start = starts[level]
            level_value = value[start:start + h * w].reshape(h, w, heads, head_dim)
            level_loc = transpose(locations[:, :, level], (0, 2, 1, 3)).reshape(num_queries * points, heads, 2)
            sampled = bilinear_sample(level_value, level_loc).reshape(num_queries, points, heads, head_dim)
            level_weights = transpose(weights[:, :, level], (0, 2, 1)).reshape(num_queries, points, heads, 1)
            contribution = (sampled * level_weights).sum(axis=1)
            total = contribution if total is None else total + contribution

        output = self.output_proj(total.reshape(num_queries, self.d_model))
        return output, weights.values
