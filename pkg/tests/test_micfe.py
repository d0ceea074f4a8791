import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lftsformer.micfe import (FeParams, MicEstimator, fe_bucket, fuzzy_entropy, group_imfs, mic,
                              reconstruct_features, select_k)
from lftsformer.vmd import VmdParams

from . import oracles


def test_mic_matches_counting_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(500)
    y = x + rng.standard_normal(500)
    est = MicEstimator(bins=8)
    mi, hx, hy = oracles.mutual_information_counts(est.discretize(x, 8).tolist(), est.discretize(y, 8).tolist())
    assert mic(x, y, est) == pytest.approx(mi / np.sqrt(hx * hy), abs=1e-12)


def test_mic_identity_and_monotone_map():
    x = np.random.default_rng(1).standard_normal(400)
    assert mic(x, x) == 1.0
    assert mic(x, 2 * x + 3) == 1.0


def test_mic_independent_below_permutation_null():
    rng = np.random.default_rng(2)
    x, y = rng.random(1000), rng.random(1000)
    est = MicEstimator(bins=16)
    score = mic(x, y, est)
    null = [mic(x, rng.permutation(y), est) for _ in range(200)]
    assert score < 0.15
    assert score < np.percentile(null, 95) * 1.5


def test_mic_errors_and_degenerate():
    with pytest.raises(ValueError):
        mic(np.ones(40), np.ones(41))
    assert mic(np.ones(100), np.arange(100.0)) == 0.0
    with pytest.raises(ValueError):
        MicEstimator(bins=1)


def test_mic_auto_bins():
    est = MicEstimator()
    assert est.n_bins(30) == 4
    assert est.n_bins(1000) == 15
    assert est.n_bins(10 ** 6) == 32


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["equal-frequency", "equal-width"]))
def test_mic_symmetric_and_bounded(seed, strategy):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(200)
    y = rng.standard_normal(200) + rng.random() * x
    est = MicEstimator(strategy=strategy)
    a, b = mic(x, y, est), mic(y, x, est)
    assert a == b
    assert 0.0 <= a <= 1.0
    assert mic(x, x, est) == 1.0


def test_select_k_two_tone():
    t = np.arange(1024)
    x = np.sin(2 * np.pi * 0.05 * t) + np.sin(2 * np.pi * 0.2 * t)
    rep = select_k(x, [1, 2, 3])
    scores = dict(rep.candidates)
    assert scores[2] >= scores[1]
    assert rep.chosen_K in (2, 3)
    assert all(0 <= v <= 1 for v in scores.values())


def test_select_k_constant_and_empty():
    rep = select_k(np.ones(64), [1, 2])
    assert rep.degenerate and rep.chosen_K is None
    with pytest.raises(ValueError):
        select_k(np.arange(64.0), [])


def test_select_k_tie_prefers_small():
    x = np.sin(np.arange(256) * 0.4)
    rep = select_k(x, [1, 2], VmdParams(), tie_epsilon=1.0)
    assert rep.chosen_K == 1


def test_fuzzy_entropy_constant_and_errors():
    assert fuzzy_entropy(np.full(100, 7.0)) == 0.0
    with pytest.raises(ValueError):
        fuzzy_entropy(np.arange(4.0), FeParams(m=3))


def test_fuzzy_entropy_matches_loop_oracle():
    x = np.random.default_rng(3).standard_normal(80)
    for m in (2, 3):
        r = 0.3 * x.std()
        assert fuzzy_entropy(x, FeParams(m=m)) == pytest.approx(oracles.fuzzy_entropy(x, m, r), rel=1e-12)


def test_membership_at_zero_distance():
    # with r tiny only exact matches count (membership 1). m=2 gives 5 vectors
    # alternating in two shapes: 3*2 + 2*1 = 8 ordered matches over 5*4.
    # m=3 gives 4 vectors: 2 + 2 = 4 over 4*3. FE = ln(0.4 / (1/3)) = ln 1.2
    x = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    assert fuzzy_entropy(x, FeParams(m=2, r=1e-9)) == pytest.approx(np.log(1.2), rel=1e-12)


def test_noise_more_complex_than_tone():
    rng = np.random.default_rng(4)
    tone = np.sin(2 * np.pi * 0.01 * np.arange(2000))
    assert fuzzy_entropy(rng.standard_normal(2000)) > fuzzy_entropy(tone)
    assert fuzzy_entropy(rng.standard_normal(300)) > oracles.fuzzy_entropy(tone[:300], 3, 0.3 * tone[:300].std())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_fuzzy_entropy_scale_consistent(seed, a):
    x = np.random.default_rng(seed).standard_normal(120)
    assert abs(fuzzy_entropy(a * x) - fuzzy_entropy(x)) < 1e-9


def test_buckets():
    assert [fe_bucket(v) for v in (0.0, 0.05, 0.1, 0.1000001, 0.2, 0.3, 0.95, 1.0)] == [1, 1, 1, 2, 2, 3, 10, 10]
    assert fe_bucket(1.7) == 10 and fe_bucket(-0.1) == 1


def test_group_imfs_hand_case(caplog):
    rng = np.random.default_rng(5)
    a, b, c = rng.standard_normal((3, 50))
    g = group_imfs({"a": a, "b": b, "c": c}, fe_values={"a": 0.05, "b": 0.15, "c": 0.17})
    assert g.groups == {1: ["a"], 2: ["b", "c"]}
    np.testing.assert_array_equal(g.new_features[1], a)
    np.testing.assert_allclose(g.new_features[2], (b + c) / 2, rtol=1e-15)
    assert g.intervals[2] == (0.1, 0.2)
    g = group_imfs({"a": a, "a2": a.copy()}, fe_values={"a": 0.4, "a2": 0.4})
    np.testing.assert_array_equal(g.new_features[4], a)
    with caplog.at_level(logging.WARNING):
        group_imfs({"a": a}, fe_values={"a": 1.3})
    assert "outside" in caplog.text


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.2, 1.5), min_size=1, max_size=40))
def test_grouping_partitions(fes):
    imfs = {f"imf{i}": np.full(8, float(i)) for i in range(len(fes))}
    g = group_imfs(imfs, fe_values={f"imf{i}": v for i, v in enumerate(fes)})
    members = [m for ms in g.groups.values() for m in ms]
    assert sorted(members) == sorted(imfs)
    assert all(1 <= gid <= 10 for gid in g.groups)


def _grouping(n=300, seed=0):
    rng = np.random.default_rng(seed)
    nf = rng.standard_normal(n)
    return group_imfs({"x": nf}, fe_values={"x": 0.5}), nf, rng


def test_reconstruct_empty_inclusion_is_identity():
    grouping, nf, rng = _grouping()
    out, rmap = reconstruct_features(grouping, {"noise": rng.standard_normal(300)}, threshold=0.99)
    np.testing.assert_array_equal(out[5], nf)
    assert rmap.entries[5] == (5, [])


def test_reconstruct_unit_weight():
    grouping, nf, rng = _grouping()
    ind = rng.standard_normal(300)
    out, _ = reconstruct_features(grouping, {"m": ind}, scores=np.array([[1.0]]))
    zi = (ind - ind.mean()) / ind.std()
    prod = nf * zi
    np.testing.assert_allclose(out[5], (prod - prod.mean()) / prod.std(), rtol=1e-12, atol=1e-12)


def test_reconstruct_threshold_oracle():
    grouping, nf, rng = _grouping()
    inds = {f"m{i}": rng.standard_normal(300) for i in (1, 2, 3)}
    _, rmap = reconstruct_features(grouping, inds, threshold=0.5, scores=np.array([[0.9, 0.6, 0.2]]))
    assert [m for m, _ in rmap.entries[5][1]] == ["m1", "m2"]


def test_reconstruct_uses_real_scores_and_monotone_threshold(tmp_path):
    grouping, nf, rng = _grouping(400, 1)
    inds = {"same": nf * 3 + 1, "close": nf + 0.3 * rng.standard_normal(400), "far": rng.standard_normal(400)}
    sizes = []
    for thr in (0.0, 0.2, 0.5, 0.9, 1.0):
        _, rmap = reconstruct_features(grouping, inds, threshold=thr)
        assert all(c >= thr for _, c in rmap.entries[5][1])
        sizes.append(len(rmap.entries[5][1]))
    assert sizes == sorted(sizes, reverse=True)
    assert rmap.heatmap.shape == (1, 3) and rmap.heatmap[0, 0] == 1.0
    rmap.write_heatmap_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().startswith("new_feature,same,close,far")
