import json
import math

import numpy as np
import pytest

from lftsformer import tensor as T
from lftsformer.model import (DataEmbedding, EncoderBranch, Informer, ModelConfig, MultiHeadAttention,
                              SizingError, StampEmbedding, TokenProjection, decoder_inputs, dense_attention,
                              desk_profile, positional_embedding, sparse_attention, sparsity_measure)
from lftsformer.tensor import Tensor, backward, gradcheck

from . import oracles


def _rng(seed=0):
    return np.random.default_rng(seed)


# embeddings

def test_positional_embedding_values():
    pe = positional_embedding(10, 8, 256)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)
    np.testing.assert_allclose(pe[:, 0], np.sin(np.arange(10)), rtol=0, atol=0)
    d, j, pos = 8, 3, 7
    scale = 512.0 ** ((d - 2) / d)
    assert pe[pos, 2 * j] == pytest.approx(math.sin(pos / scale), rel=1e-14)
    assert pe[pos, 2 * j + 1] == pytest.approx(math.cos(pos / scale), rel=1e-14)


def test_stamp_embedding():
    emb = StampEmbedding(4, T.make_rng(0))
    marks = np.array([[3, 10, 2, 15, 6], [3, 10, 2, 15, 6], [0, 0, 0, 1, 1]])
    out = emb(marks).data
    np.testing.assert_array_equal(out[0], out[1])
    for t in emb.tables:
        t.data[:] = 0
    np.testing.assert_array_equal(emb(marks).data, 0.0)
    with pytest.raises(T.ContractError):
        emb(np.array([[60, 0, 0, 0, 0]]))


def test_stamp_gradient_counts_occurrences():
    emb = StampEmbedding(3, T.make_rng(1))
    marks = np.array([[5, 1, 0, 2, 3], [5, 2, 0, 2, 4], [7, 1, 1, 2, 3]])
    backward(emb(marks).sum())
    np.testing.assert_array_equal(emb.tables[0].grad[5], [2, 2, 2])
    np.testing.assert_array_equal(emb.tables[3].grad[2], [3, 3, 3])
    np.testing.assert_array_equal(emb.tables[0].grad[0], 0)
    # finite differences agree with the counting rule
    assert gradcheck(lambda: emb(marks).sum(), [emb.tables[0], emb.tables[4]]) < 1e-6


def test_token_projection():
    proj = TokenProjection(2, 4, T.make_rng(2))
    assert np.all(proj(Tensor(np.zeros((1, 8, 2)))).data == 0)
    x = _rng(3).standard_normal((8, 2))
    np.testing.assert_allclose(proj(Tensor(x[None])).data[0],
                               oracles.conv1d_naive(x, proj.weight.data, "circular"), rtol=1e-12, atol=1e-13)
    proj.weight.data[:] = 0
    proj.weight.data[1] = _rng(4).standard_normal((2, 4))
    np.testing.assert_allclose(proj(Tensor(x[None])).data[0], x @ proj.weight.data[1], rtol=1e-14)


def test_data_embedding_sums_parts():
    emb = DataEmbedding(2, 4, 16, alpha=0.5, dropout=0.0, rng=T.make_rng(5))
    x = _rng(6).standard_normal((1, 6, 2))
    marks = _rng(7).integers(0, 7, (1, 6, 5))
    want = 0.5 * emb.value(Tensor(x)).data + positional_embedding(6, 4, 16) + emb.stamp(marks).data
    np.testing.assert_allclose(emb(x, marks).data, want, rtol=1e-14)


# sparsity score and attention

def test_sparsity_measure():
    q = np.ones((3, 4))
    k = np.ones((5, 4))
    np.testing.assert_allclose(sparsity_measure(q, k), 0.0, atol=1e-15)
    k = np.zeros((5, 4))
    k[2] = 5.0
    assert np.all(sparsity_measure(q, k) > 0)
    rng = _rng(8)
    q, k = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    np.testing.assert_allclose(sparsity_measure(q, k), oracles.sparsity_measure(q, k), rtol=1e-10, atol=1e-12)


def _qkv(L, seed, B=2, H=2, d=4):
    rng = _rng(seed)
    return [Tensor(rng.standard_normal((B, H, L, d))) for _ in range(3)]


@pytest.mark.parametrize("L", [8, 16, 32, 64])
def test_full_selection_equals_dense(L):
    q, k, v = _qkv(L, L)
    out, _ = sparse_attention(q, k, v, u=L)
    for b in range(2):
        for h in range(2):
            want = oracles.dense_attention(q.data[b, h], k.data[b, h], v.data[b, h])
            assert np.max(np.abs(out.data[b, h] - want)) < 1e-12


def test_sparse_rows_match_oracle():
    q, k, v = _qkv(16, 9)
    out, sel = sparse_attention(q, k, v, u=4)
    assert sel.shape == (2, 2, 4)
    for b in range(2):
        for h in range(2):
            want = oracles.dense_attention(q.data[b, h], k.data[b, h], v.data[b, h])
            m = oracles.sparsity_measure(q.data[b, h], k.data[b, h])
            assert set(sel[b, h]) == set(np.argsort(-m)[:4])
            lazy = np.setdiff1d(np.arange(16), sel[b, h])
            assert np.max(np.abs(out.data[b, h, sel[b, h]] - want[sel[b, h]])) < 1e-12
            np.testing.assert_allclose(out.data[b, h, lazy], np.broadcast_to(v.data[b, h].mean(0), (12, 4)),
                                       rtol=1e-14)
    # heads choose their queries independently
    assert any(set(sel[b, 0]) != set(sel[b, 1]) for b in range(2))


def test_identical_values_pass_through():
    q, k, _ = _qkv(16, 10)
    v = Tensor(np.broadcast_to(_rng(11).standard_normal(4), (2, 2, 16, 4)).copy())
    out, _ = sparse_attention(q, k, v, u=3)
    np.testing.assert_allclose(out.data, v.data, rtol=1e-13)


def test_zero_active_queries_rejected():
    q, k, v = _qkv(8, 12)
    with pytest.raises(T.ContractError):
        sparse_attention(q, k, v, u=0)


def test_attention_rows_convex():
    q, k, _ = _qkv(12, 13, B=1, H=1)
    eye = Tensor(np.eye(12)[None, None])
    w = dense_attention(q, k, eye).data[0, 0]
    assert np.all(w >= 0)
    assert np.max(np.abs(w.sum(-1) - 1)) <= 1e-12
    wc = dense_attention(q, k, eye, causal=True).data[0, 0]
    assert np.all(np.triu(wc, 1) == 0) and np.max(np.abs(wc.sum(-1) - 1)) <= 1e-12
    np.testing.assert_allclose(dense_attention(q, k, Tensor(_qkv(12, 14, 1, 1)[2].data), causal=True).data[0, 0],
                               oracles.dense_attention(q.data[0, 0], k.data[0, 0], _qkv(12, 14, 1, 1)[2].data[0, 0],
                                                       causal=True), rtol=1e-12)


def test_sampled_keys_above_threshold():
    q, k, v = _qkv(300, 15, B=1, H=1)
    out, sel = sparse_attention(q, k, v, u=12, sample_threshold=256, sample_size=22, rng=T.make_rng(0))
    assert out.shape == (1, 1, 300, 4) and np.all(np.isfinite(out.data)) and sel.shape == (1, 1, 12)
    again, _ = sparse_attention(q, k, v, u=12, sample_threshold=256, sample_size=22, rng=T.make_rng(0))
    assert again.data.tobytes() == out.data.tobytes()


def test_permutation_equivariance_without_positions():
    attn = MultiHeadAttention(8, 2, T.make_rng(3), "dense")
    x = _rng(16).standard_normal((1, 10, 8))
    perm = _rng(17).permutation(10)
    a = attn(Tensor(x)).data
    b = attn(Tensor(x[:, perm])).data
    np.testing.assert_allclose(b, a[:, perm], rtol=1e-12, atol=1e-14)
    pe = positional_embedding(10, 8, 10)
    a = attn(Tensor(x + pe)).data
    b = attn(Tensor(x[:, perm] + pe)).data
    assert not np.allclose(b, a[:, perm])


# encoder

def test_branch_lengths():
    rng = T.make_rng(4)
    x = Tensor(_rng(18).standard_normal((2, 32, 8)))
    assert EncoderBranch(3, 2, 8, 2, 16, 0.0, 3.8, rng)(x, 4).shape == (2, 4, 8)
    assert EncoderBranch(2, 1, 8, 2, 16, 0.0, 3.8, rng)(x[:, 16:], 4).shape == (2, 4, 8)
    assert EncoderBranch(1, 0, 8, 2, 16, 0.0, 3.8, rng)(x[:, 24:], 4).shape == (2, 4, 8)


def test_branch_with_silent_blocks_matches_trace():
    # zeroed attention and feed-forward outputs reduce each block to two layer norms
    br = EncoderBranch(2, 1, 4, 2, 8, 0.0, 3.8, T.make_rng(5))
    for layer in br.layers:
        layer.attn.out_proj.weight.data[:] = 0
        layer.ff.down.weight.data[:] = 0
    x = _rng(19).standard_normal((1, 16, 4))

    def ln(a):
        c = a - a.mean(-1, keepdims=True)
        return c / np.sqrt((c * c).mean(-1, keepdims=True) + 1e-5)

    h = ln(ln(x))
    conv = oracles.conv1d_naive(h[0], br.convs[0].weight.data, "circular") + br.convs[0].bias.data
    h = np.where(conv > 0, conv, np.expm1(conv))
    h = h.reshape(8, 2, 4).max(1)[None]
    h = ln(ln(h))
    h = h[0].reshape(4, 2, 4).max(1)[None]
    want = ln(h)
    np.testing.assert_allclose(br(Tensor(x), 4).data, want, rtol=1e-10, atol=1e-12)


def test_stacked_fusion_shape():
    cfg = desk_profile(seed=1)
    m = Informer(cfg).eval()
    rng = _rng(20)
    fused = m.encode(rng.standard_normal((2, 64, 5)), rng.integers(0, 7, (2, 64, 5)))
    assert fused.shape == (2, 24, cfg.d_model) and np.all(np.isfinite(fused.data))
    assert m.encoder.branch_lengths == [(64, 8), (32, 8), (16, 8)]
    single = Informer(desk_profile(stacked=False)).eval()
    assert single.encode(rng.standard_normal((1, 64, 5)), rng.integers(0, 7, (1, 64, 5))).shape == (1, 8, 32)


# decoder and full model

def _batch(cfg, B, seed):
    rng = _rng(seed)
    x = rng.standard_normal((B, cfg.seq_len, cfg.enc_in))
    mk = np.stack([rng.integers(0, v, (B, cfg.seq_len)) for v in (60, 24, 7, 32, 13)], -1)
    tm = np.stack([rng.integers(0, v, (B, cfg.pred_len)) for v in (60, 24, 7, 32, 13)], -1)
    return x, mk, tm


def test_zero_head_gives_zero_predictions():
    cfg = desk_profile()
    m = Informer(cfg).eval()
    m.head.weight.data[:] = 0
    x, mk, tm = _batch(cfg, 2, 21)
    assert np.all(m.forecast(x, mk, tm).data == 0)


def test_placeholder_perturbation_never_reaches_earlier_steps():
    cfg = desk_profile(seed=2)
    m = Informer(cfg).eval()
    x, mk, tm = _batch(cfg, 1, 22)
    x_dec, mark_dec = decoder_inputs(x, mk, tm, cfg.pred_len)
    memory = m.encode(x, mk)
    base = m.decode(memory, x_dec, mark_dec).data
    for k in (1, 7, 15):
        moved = x_dec.copy()
        moved[:, cfg.pred_len + k] += 3.0
        out = m.decode(memory, moved, mark_dec).data
        np.testing.assert_array_equal(out[:, :k], base[:, :k])
        assert not np.allclose(out[:, k], base[:, k])


@pytest.mark.parametrize("kw", [dict(), dict(n_heads=4), dict(seq_len=32, pred_len=8), dict(enc_in=3, dec_in=3),
                                dict(stacked=False), dict(decoder_layers=1, d_model=16)])
def test_shape_contract(kw):
    cfg = desk_profile(**kw)
    x, mk, tm = _batch(cfg, 2, 23)
    assert Informer(cfg).eval().forecast(x, mk, tm).shape == (2, cfg.pred_len, 1)


def test_sizing_errors():
    with pytest.raises(SizingError):
        ModelConfig(d_model=30, n_heads=4)
    with pytest.raises(SizingError):
        ModelConfig(seq_len=100)
    with pytest.raises(SizingError):
        ModelConfig(seq_len=64, pred_len=48)
    with pytest.raises(SizingError):
        ModelConfig(branch_convs=(2, 1, 2))
    cfg = ModelConfig()
    assert (cfg.d_model, cfg.n_heads, cfg.encoder_layers, cfg.decoder_layers, cfg.sparse_factor, cfg.dropout) \
        == (512, 2, 8, 10, 3.8, 0.2)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    m = Informer(desk_profile())
    with pytest.raises(T.ShapeError):
        m.encode(np.zeros((1, 32, 5)), np.zeros((1, 32, 5), dtype=int))


def test_every_parameter_gets_gradient():
    cfg = desk_profile(dropout=0.1, seed=3)
    m = Informer(cfg)
    x, mk, tm = _batch(cfg, 4, 24)
    backward((m.forecast(x, mk, tm, rng=T.make_rng(0)) ** 2.0).mean())
    seen = [set(np.unique(mk[..., p])) | set(np.unique(tm[..., p])) | set(np.unique(mk[:, -cfg.pred_len:, p]))
            for p in range(5)]
    for name, p in m.named_parameters():
        assert p.grad is not None, name
        if ".tables." in name:
            used = np.abs(p.grad).sum(1) > 0
            assert set(np.flatnonzero(used)) <= seen[int(name.rsplit(".", 1)[1])]
        else:
            assert np.any(p.grad != 0), name


def test_toy_decoder_gradcheck():
    cfg = desk_profile(d_model=16, seq_len=16, pred_len=4, decoder_layers=1, branch_blocks=(1, 1, 1),
                       branch_convs=(1, 1, 0), d_ff=16, dropout=0.1, seed=4)
    m = Informer(cfg)
    x, mk, tm = _batch(cfg, 2, 25)
    w = _rng(26).standard_normal((2, 4, 1))
    loss = lambda: (m.forecast(x, mk, tm, rng=T.make_rng(7)) * w).sum()
    params = [p for n, p in m.named_parameters() if n.startswith(("decoder", "head", "dec_embed.value"))]
    assert gradcheck(loss, params, max_entries=6, rng=T.make_rng(1)) < 1e-4


def test_summary_json(tmp_path):
    m = Informer(desk_profile())
    m.write_summary(tmp_path / "s.json")
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["parameter_count"] == m.n_parameters()
    assert s["layers"][-1] == {"name": "prediction", "shape": [1, 16, 1]}
    assert [b["output_length"] for b in s["branches"]] == [8, 8, 8]
    assert s["attention_blocks_total"] == 6


def test_initialization_is_seeded():
    a, b = Informer(desk_profile(seed=9)), Informer(desk_profile(seed=9))
    assert all(p.data.tobytes() == q.data.tobytes() for p, q in zip(a.parameters(), b.parameters()))
    c = Informer(desk_profile(seed=10))
    assert a.parameters()[0].data.tobytes() != c.parameters()[0].data.tobytes()
