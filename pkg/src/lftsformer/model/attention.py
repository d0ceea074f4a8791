"""Multi-head attention with per-head sparse query selection."""
from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..tensor import ContractError, Module, Tensor
from .layers import Linear


def sparsity_measure(q: np.ndarray, k: np.ndarray, sample: np.ndarray | None = None) -> np.ndarray:
    """``ln sum_l exp(q k_l / sqrt d) - mean_l (q k_l / sqrt d) - ln L_K`` per query, stabilized.

    ``q`` is (..., L_Q, d) and ``k`` is (..., L_K, d). With ``sample`` (L_Q, s) key
    indices, each query is scored against its own sampled keys only.
    """
    d = q.shape[-1]
    if sample is None:
        s = q @ np.swapaxes(k, -1, -2) / math.sqrt(d)
    else:
        ks = k[..., sample, :]                          # (..., L_Q, s, d)
        s = np.einsum("...qd,...qsd->...qs", q, ks) / math.sqrt(d)
    mx = s.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(s - mx).sum(axis=-1)) + mx[..., 0]
    return lse - s.mean(axis=-1) - math.log(s.shape[-1])


def dense_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """softmax(q k^T / sqrt d) v over the last two axes; ``causal`` hides keys after the query."""
    d = q.shape[-1]
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d))
    if causal:
        Lq, Lk = scores.shape[-2], scores.shape[-1]
        scores = T.masked_fill(scores, np.triu(np.ones((Lq, Lk), dtype=bool), k=1), -np.inf)
    return T.matmul(T.softmax(scores, -1), v)


def sparse_attention(q: Tensor, k: Tensor, v: Tensor, u: int, sample_threshold: int = 256,
                     sample_size: int | None = None, rng: np.random.Generator | None = None):
    """Attend only from the ``u`` queries with the largest sparsity score, per head.

    ``q, k, v`` are (B, H, L, d). The other rows get the mean of ``v``. Returns
    the output and the (B, H, u) selected query indices (ascending).
    """
    if u < 1:
        raise ContractError("active query count u must be >= 1")
    B, H, L_Q, d = q.shape
    L_K = k.shape[2]
    u = min(u, L_Q)
    sample = None
    if L_K > sample_threshold:
        size = min(L_K, sample_size or u)
        sample = (rng or T.make_rng(0)).integers(0, L_K, size=(L_Q, size))
    M = sparsity_measure(q.data, k.data, sample)
    top = np.sort(np.argsort(-M, axis=-1, kind="stable")[..., :u], axis=-1)
    T.record_branch(top)
    idx = np.broadcast_to(top[..., None], (B, H, u, d))
    active = dense_attention(T.gather(q, idx, axis=2), k, v)
    lazy = T.broadcast_to(T.mean(v, axis=2, keepdims=True), (B, H, L_Q, v.shape[-1]))
    return T.index_put(lazy, idx, active, axis=2), top


class MultiHeadAttention(Module):
    """``mode``: ``sparse`` (top-u queries per head), ``dense`` or ``causal``."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, mode: str = "dense",
                 factor: float = 3.8, sample_threshold: int = 256):
        if mode not in ("sparse", "dense", "causal"):
            raise ValueError(f"unknown attention mode {mode!r}")
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)
        self.n_heads = n_heads
        self.mode = mode
        self.factor = factor
        self.sample_threshold = sample_threshold
        self.last_selection: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, L, D = x.shape
        return T.transpose(T.reshape(x, (B, L, self.n_heads, D // self.n_heads)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, memory: Tensor | None = None, u: int | None = None,
                 rng: np.random.Generator | None = None) -> Tensor:
        src = x if memory is None else memory
        q, k, v = self._split(self.q_proj(x)), self._split(self.k_proj(src)), self._split(self.v_proj(src))
        if self.mode == "sparse":
            L = x.shape[1]
            if u is None:
                u = max(1, min(L, math.ceil(self.factor * math.log(L))))
            n_sample = math.ceil(self.factor * math.log(src.shape[1]))
            out, self.last_selection = sparse_attention(q, k, v, u, self.sample_threshold, n_sample, rng)
        else:
            out = dense_attention(q, k, v, causal=self.mode == "causal")
        B, H, L, dh = out.shape
        return self.out_proj(T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, L, H * dh)))
