"""Shared building blocks: seeded initialization, linear, layer norm, feed-forward."""
from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..tensor import Module, Parameter, Tensor


def xavier(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(xavier(rng, (d_in, d_out), d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float, rng: np.random.Generator):
        self.up = Linear(d_model, d_ff, rng)
        self.down = Linear(d_ff, d_model, rng)
        self.dropout = dropout

    def __call__(self, x: Tensor, drop_rng=None) -> Tensor:
        h = T.dropout(T.elu(self.up(x)), self.dropout, self.training, drop_rng)
        return self.down(h)


def max_pool2(x: Tensor) -> Tensor:
    """Stride-2, width-2 max-pool over axis -2 of (B, L, D); L must be even."""
    B, L, D = x.shape
    if L % 2:
        raise T.ShapeError(f"max_pool2 needs an even length, got {L}")
    return T.max_(T.reshape(x, (B, L // 2, 2, D)), axis=2)
