"""Stacked multi-scale encoder: three branches distilled to L/8, fused along time."""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Module, Parameter, Tensor
from .attention import MultiHeadAttention
from .layers import FeedForward, LayerNorm, Linear, max_pool2, xavier


class EncoderLayer(Module):
    def __init__(self, d_model, n_heads, d_ff, dropout, factor, rng, sample_threshold=256):
        self.attn = MultiHeadAttention(d_model, n_heads, rng, "sparse", factor, sample_threshold)
        self.ff = FeedForward(d_model, d_ff, dropout, rng)
        self.norm1 = LayerNorm(d_model)
        self.norm2 = LayerNorm(d_model)
        self.dropout = dropout

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        drop = lambda t: T.dropout(t, self.dropout, self.training, rng)
        x = self.norm1(x + drop(self.attn(x, rng=rng)))
        return self.norm2(x + drop(self.ff(x, rng)))


class DistilLayer(Module):
    """Circular kernel-3 convolution, ELU, then a stride-2 max-pool: halves the time axis."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.weight = Parameter(xavier(rng, (3, d_model, d_model), 3 * d_model, 3 * d_model))
        self.bias = Parameter(np.zeros(d_model))

    def __call__(self, x: Tensor) -> Tensor:
        return max_pool2(T.elu(T.conv1d(x, self.weight, padding="circular", bias=self.bias)))


class EncoderBranch(Module):
    """Attention blocks interleaved with distilling convs, then parameter-free pools down to ``out_len``."""

    def __init__(self, n_attn, n_conv, d_model, n_heads, d_ff, dropout, factor, rng, sample_threshold=256):
        self.layers = [EncoderLayer(d_model, n_heads, d_ff, dropout, factor, rng, sample_threshold)
                       for _ in range(n_attn)]
        self.convs = [DistilLayer(d_model, rng) for _ in range(n_conv)]
        self.norm = LayerNorm(d_model)

    def __call__(self, x: Tensor, out_len: int, rng=None) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x, rng)
            if i < len(self.convs):
                x = self.convs[i](x)
        while x.shape[1] > out_len:
            x = max_pool2(x)
        return self.norm(x)


class StackedEncoder(Module):
    """Branches see the full input, its most recent half and its most recent quarter."""

    def __init__(self, cfg, rng: np.random.Generator):
        n = 3 if cfg.stacked else 1
        self.branches = [EncoderBranch(cfg.branch_blocks[i], cfg.branch_convs[i], cfg.d_model, cfg.n_heads,
                                       cfg.ff_dim, cfg.dropout, cfg.sparse_factor, rng, cfg.sample_threshold)
                         for i in range(n)]
        self.fuse = Linear(cfg.d_model, cfg.d_model, rng)
        self.branch_lengths: list[tuple[int, int]] = []

    def __call__(self, tokens: Tensor, rng=None) -> Tensor:
        L = tokens.shape[1]
        out_len = L // 8
        maps, self.branch_lengths = [], []
        for i, branch in enumerate(self.branches):
            crop = tokens if i == 0 else tokens[:, L - L // 2 ** i:, :]
            m = branch(crop, out_len, rng)
            self.branch_lengths.append((crop.shape[1], m.shape[1]))
            maps.append(m)
        return self.fuse(T.concat(maps, axis=1))
