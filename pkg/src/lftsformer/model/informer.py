"""The full forecaster: embeddings, stacked sparse encoder, generative decoder, linear head."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..tensor import Module, Tensor
from .config import ModelConfig
from .decoder import Decoder
from .embed import DataEmbedding
from .encoder import StackedEncoder
from .layers import Linear


def decoder_inputs(x_enc: np.ndarray, mark_enc: np.ndarray, target_marks: np.ndarray, pred_len: int):
    """Start segment (last ``pred_len`` input steps) followed by ``pred_len`` zero placeholders."""
    x_enc = np.asarray(x_enc, dtype=np.float64)
    B, _, C = x_enc.shape
    x_dec = np.concatenate([x_enc[:, -pred_len:], np.zeros((B, pred_len, C))], axis=1)
    mark_dec = np.concatenate([np.asarray(mark_enc)[:, -pred_len:], np.asarray(target_marks)], axis=1)
    return x_dec, mark_dec


class Informer(Module):
    """Maps (B, L_x, enc_in) inputs and their time marks to (B, L_y, c_out) forecasts in one pass."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = T.make_rng(cfg.seed)
        self.enc_embed = DataEmbedding(cfg.enc_in, cfg.d_model, cfg.seq_len, cfg.alpha_embed, cfg.dropout, rng)
        # left-only padding in the decoder embedding keeps placeholders from leaking backwards
        self.dec_embed = DataEmbedding(cfg.dec_in, cfg.d_model, cfg.seq_len, cfg.alpha_embed, cfg.dropout, rng,
                                       causal=True)
        self.encoder = StackedEncoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.head = Linear(cfg.d_model, cfg.c_out, rng)
        self._trace: list | None = None

    def _note(self, name: str, t: Tensor) -> Tensor:
        if self._trace is not None:
            self._trace.append((name, list(t.shape)))
        return t

    def encode(self, x_enc, mark_enc, rng=None) -> Tensor:
        x = T.as_tensor(x_enc)
        if x.shape[1:] != (self.cfg.seq_len, self.cfg.enc_in):
            raise T.ShapeError(f"encoder input {x.shape} does not match (B, {self.cfg.seq_len}, {self.cfg.enc_in})")
        tokens = self._note("enc_embedding", self.enc_embed(x, mark_enc, rng))
        return self._note("fused_map", self.encoder(tokens, rng))

    def decode(self, memory: Tensor, x_dec, mark_dec, rng=None) -> Tensor:
        h = self._note("dec_embedding", self.dec_embed(T.as_tensor(x_dec), mark_dec, rng))
        h = self._note("decoder", self.decoder(h, memory, rng))
        out = self.head(h[:, -self.cfg.pred_len:, :])
        return self._note("prediction", out)

    def __call__(self, x_enc, mark_enc, x_dec, mark_dec, rng=None) -> Tensor:
        return self.decode(self.encode(x_enc, mark_enc, rng), x_dec, mark_dec, rng)

    def forecast(self, x_enc, mark_enc, target_marks, rng=None) -> Tensor:
        x_dec, mark_dec = decoder_inputs(x_enc, mark_enc, target_marks, self.cfg.pred_len)
        return self(x_enc, mark_enc, x_dec, mark_dec, rng)

    def summary(self) -> dict:
        cfg = self.cfg
        x = np.zeros((1, cfg.seq_len, cfg.enc_in))
        marks = np.zeros((1, cfg.seq_len, 5), dtype=np.int64)
        was = self.training
        self.eval()
        self._trace = []
        try:
            with T.no_grad():
                self.forecast(x, marks, np.zeros((1, cfg.pred_len, 5), dtype=np.int64))
            shapes = self._trace
        finally:
            self._trace = None
            self.train(was)
        n_branches = len(self.encoder.branches)
        return {
            "config": cfg.to_dict(),
            "layers": [{"name": n, "shape": s} for n, s in shapes],
            "branches": [{"input_length": a, "output_length": b, "attention_blocks": cfg.branch_blocks[i],
                          "distil_convs": cfg.branch_convs[i]}
                         for i, (a, b) in enumerate(self.encoder.branch_lengths[:n_branches])],
            "attention_blocks_total": sum(cfg.branch_blocks[:n_branches]),
            "parameters": {n: list(p.shape) for n, p in self.named_parameters()},
            "parameter_count": self.n_parameters(),
        }

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")
