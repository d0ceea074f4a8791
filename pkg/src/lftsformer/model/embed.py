"""Input embedding: convolutional value projection, fixed positions, learnable time stamps."""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..ingest import MARK_VOCAB
from ..tensor import Module, Parameter, Tensor
from .layers import xavier


def positional_embedding(L: int, d_model: int, L_x: int) -> np.ndarray:
    """PE[pos, 2j] = sin(pos / s_j), PE[pos, 2j+1] = cos(pos / s_j), s_j = (2 L_x)^(2j / d_model)."""
    if d_model % 2:
        raise ValueError("d_model must be even")
    pos = np.arange(L, dtype=np.float64)[:, None]
    scale = (2.0 * L_x) ** (2.0 * np.arange(d_model // 2) / d_model)
    pe = np.empty((L, d_model))
    pe[:, 0::2] = np.sin(pos / scale)
    pe[:, 1::2] = np.cos(pos / scale)
    return pe


class TokenProjection(Module):
    """Kernel-3 convolution over time, no bias. ``causal`` pads on the left only."""

    def __init__(self, c_in: int, d_model: int, rng: np.random.Generator, causal: bool = False):
        self.weight = Parameter(xavier(rng, (3, c_in, d_model), 3 * c_in, 3 * d_model))
        self.padding = "causal" if causal else "circular"

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, padding=self.padding)


class StampEmbedding(Module):
    """Sum of one learnable table per calendar field (minute, hour, weekday, day, month)."""

    def __init__(self, d_model: int, rng: np.random.Generator, vocab: tuple[int, ...] = MARK_VOCAB):
        self.tables = [Parameter(xavier(rng, (v, d_model), v, d_model)) for v in vocab]

    def __call__(self, marks: np.ndarray) -> Tensor:
        marks = np.asarray(marks)
        if marks.shape[-1] != len(self.tables):
            raise T.ShapeError(f"expected {len(self.tables)} mark fields, got shape {marks.shape}")
        out = None
        for p, table in enumerate(self.tables):
            e = T.embedding_lookup(table, marks[..., p])
            out = e if out is None else out + e
        return out


class DataEmbedding(Module):
    def __init__(self, c_in: int, d_model: int, L_x: int, alpha: float, dropout: float,
                 rng: np.random.Generator, causal: bool = False):
        self.value = TokenProjection(c_in, d_model, rng, causal)
        self.stamp = StampEmbedding(d_model, rng)
        self.alpha = alpha
        self.d_model = d_model
        self.L_x = L_x
        self.dropout = dropout

    def __call__(self, x, marks, drop_rng=None) -> Tensor:
        x = T.as_tensor(x)
        pe = positional_embedding(x.shape[-2], self.d_model, self.L_x)
        tokens = self.value(x) * self.alpha + pe + self.stamp(marks)
        return T.dropout(tokens, self.dropout, self.training, drop_rng)
