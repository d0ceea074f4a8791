from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace


class SizingError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 256            # L_x
    pred_len: int = 64            # L_y; the decoder start segment has the same length
    d_model: int = 512
    n_heads: int = 2
    encoder_layers: int = 8
    decoder_layers: int = 10
    sparse_factor: float = 3.8
    dropout: float = 0.2
    enc_in: int = 5
    dec_in: int = 5
    c_out: int = 1
    alpha_embed: float = 1.0
    d_ff: int | None = None       # None: 4 * d_model
    branch_blocks: tuple[int, ...] = (3, 2, 1)   # attention blocks on the L, L/2, L/4 inputs
    branch_convs: tuple[int, ...] = (2, 1, 0)    # distilling convs on the same inputs
    stacked: bool = True          # False keeps only the full-length branch
    sample_threshold: int = 256   # above this key count the sparsity score uses sampled keys
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise SizingError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 2:
            raise SizingError("d_model must be even for the sinusoidal position table")
        if self.seq_len % 8:
            raise SizingError(f"seq_len {self.seq_len} must be divisible by 8")
        if self.seq_len < 2 * self.pred_len:
            raise SizingError(f"seq_len {self.seq_len} must be >= 2 * pred_len {self.pred_len}")
        if len(self.branch_blocks) != 3 or len(self.branch_convs) != 3:
            raise SizingError("need attention and conv counts for exactly three branches")
        for i, (a, c) in enumerate(zip(self.branch_blocks, self.branch_convs)):
            if a < 1 or c < 0 or c > 3 - i or c > a:
                raise SizingError(f"branch {i}: {a} attention blocks and {c} convs cannot reach L/8")
        if not 0 <= self.dropout < 1 or self.sparse_factor <= 0:
            raise SizingError("dropout must be in [0, 1) and sparse_factor > 0")

    @property
    def L_x(self) -> int:
        return self.seq_len

    @property
    def L_y(self) -> int:
        return self.pred_len

    @property
    def ff_dim(self) -> int:
        return self.d_ff or 4 * self.d_model

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def active_queries(self, L: int) -> int:
        return max(1, min(L, math.ceil(self.sparse_factor * math.log(L))))

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_blocks"], d["branch_convs"] = list(self.branch_blocks), list(self.branch_convs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for k in ("branch_blocks", "branch_convs"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def paper_profile(**kw) -> ModelConfig:
    return ModelConfig(**kw)


def desk_profile(**kw) -> ModelConfig:
    base = dict(seq_len=64, pred_len=16, d_model=32, n_heads=2, encoder_layers=2, decoder_layers=2,
                d_ff=64, dropout=0.05)
    base.update(kw)
    return ModelConfig(**base)
