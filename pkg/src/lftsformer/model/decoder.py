"""Generative decoder: causal self-attention, cross-attention over the encoder map, feed-forward."""
from __future__ import annotations

from .. import tensor as T
from ..tensor import Module, Tensor
from .attention import MultiHeadAttention
from .layers import FeedForward, LayerNorm


class DecoderLayer(Module):
    def __init__(self, d_model, n_heads, d_ff, dropout, rng):
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng, "causal")
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng, "dense")
        self.ff = FeedForward(d_model, d_ff, dropout, rng)
        self.norm1 = LayerNorm(d_model)
        self.norm2 = LayerNorm(d_model)
        self.norm3 = LayerNorm(d_model)
        self.dropout = dropout

    def __call__(self, x: Tensor, memory: Tensor, rng=None) -> Tensor:
        drop = lambda t: T.dropout(t, self.dropout, self.training, rng)
        x = self.norm1(x + drop(self.self_attn(x)))
        x = self.norm2(x + drop(self.cross_attn(x, memory)))
        return self.norm3(x + drop(self.ff(x, rng)))


class Decoder(Module):
    def __init__(self, cfg, rng):
        self.layers = [DecoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_dim, cfg.dropout, rng)
                       for _ in range(cfg.decoder_layers)]
        self.norm = LayerNorm(cfg.d_model)

    def __call__(self, x: Tensor, memory: Tensor, rng=None) -> Tensor:
        for layer in self.layers:
            x = layer(x, memory, rng)
        return self.norm(x)
