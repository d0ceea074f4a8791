"""Mutual-information scoring, fuzzy-entropy grouping and feature reconstruction.

``mic`` here is plain mutual information normalized by ``sqrt(H(X) H(Y))`` on
a histogram, not the grid-search maximal information coefficient.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .vmd import VmdParams, vmd_decompose

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MicEstimator:
    bins: int | None = None  # None: floor(n ** 0.4) clamped to [4, 32]
    strategy: str = "equal-frequency"

    def __post_init__(self):
        if self.bins is not None and self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.strategy not in ("equal-frequency", "equal-width"):
            raise ValueError(f"unknown binning strategy {self.strategy!r}")

    def n_bins(self, n: int) -> int:
        if self.bins is not None:
            return self.bins
        return int(min(32, max(4, math.floor(n ** 0.4))))

    def discretize(self, x: np.ndarray, bins: int) -> np.ndarray:
        n = len(x)
        if self.strategy == "equal-frequency":
            # ties share a rank, hence a bin
            rank = rankdata(x, method="min") - 1
            return (rank * bins // n).astype(np.int64)
        lo, hi = x.min(), x.max()
        if hi == lo:
            return np.zeros(n, dtype=np.int64)
        return np.minimum(((x - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)


def _entropy(counts: np.ndarray, n: int) -> float:
    # sorted so the joint entropy does not depend on argument order
    p = np.sort(counts[counts > 0]) / n
    return float(-(p * np.log(p)).sum())


def mic(x, y, est: MicEstimator | None = None) -> float:
    est = est or MicEstimator()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"mic needs equal-length 1-D inputs, got {x.shape} and {y.shape}")
    n = len(x)
    if n < 30:
        raise ValueError("mic needs at least 30 samples")
    b = est.n_bins(n)
    bx, by = est.discretize(x, b), est.discretize(y, b)
    hx = _entropy(np.bincount(bx, minlength=b), n)
    hy = _entropy(np.bincount(by, minlength=b), n)
    if hx == 0.0 or hy == 0.0:
        return 0.0
    hxy = _entropy(np.bincount(bx * b + by, minlength=b * b), n)
    # I = H(X) + H(Y) - H(X,Y) keeps mic(x, x) == 1 exactly
    info = hx + hy - hxy
    return float(min(1.0, max(0.0, info / math.sqrt(hx * hy))))


@dataclass
class KSelectionReport:
    candidates: list[tuple[int, float]]
    chosen_K: int | None
    degenerate: bool = False
    failures: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"candidates": [[k, v] for k, v in self.candidates], "chosen_K": self.chosen_K,
                "degenerate": self.degenerate, "failures": {str(k): v for k, v in self.failures.items()}}


def select_k(signal, k_candidates, vmd_params: VmdParams | None = None,
             est: MicEstimator | None = None, tie_epsilon: float = 0.005) -> KSelectionReport:
    """Pick the mode count whose reconstruction shares the most information with the input.

    The smallest candidate within ``tie_epsilon`` of the best score wins.
    """
    ks = sorted(set(int(k) for k in k_candidates))
    if not ks:
        raise ValueError("k_candidates is empty")
    signal = np.asarray(signal, dtype=np.float64)
    base = vmd_params or VmdParams()
    if np.ptp(signal) == 0:
        log.warning("constant signal: reconstruction score undefined")
        return KSelectionReport([], None, degenerate=True)
    scored, failures = [], {}
    for k in ks:
        try:
            imfs = vmd_decompose(signal, VmdParams(k, base.alpha, base.tau, base.tol, base.max_iter, base.dc_mode))
        except ValueError as exc:
            failures[k] = str(exc)
            log.warning("K=%d excluded: %s", k, exc)
            continue
        scored.append((k, mic(signal, imfs.reconstruction(), est)))
    if not scored:
        return KSelectionReport([], None, degenerate=True, failures=failures)
    best = max(v for _, v in scored)
    chosen = min(k for k, v in scored if v >= best - tie_epsilon)
    return KSelectionReport(scored, chosen, failures=failures)


@dataclass(frozen=True)
class FeParams:
    m: int = 3
    r: float | None = None      # absolute tolerance; None means r_factor * std
    r_factor: float = 0.3
    max_points: int | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.r is not None and not self.r > 0:
            raise ValueError("r must be > 0")


def _phi(x: np.ndarray, dim: int, r: float, chunk: int = 512) -> float:
    count = len(x) - dim + 1
    vecs = np.lib.stride_tricks.sliding_window_view(x, dim)[:count]
    vecs = vecs - vecs.mean(axis=1, keepdims=True)
    total = 0.0
    scale = -math.log(2.0) / (r * r) if r > 0 else None
    for lo in range(0, count, chunk):
        blk = vecs[lo:lo + chunk]
        d = np.abs(blk[:, None, 0] - vecs[None, :, 0])
        for c in range(1, dim):
            np.maximum(d, np.abs(blk[:, None, c] - vecs[None, :, c]), out=d)
        if scale is None:
            sim = (d == 0).astype(float)
        else:
            np.multiply(d, d, out=d)
            d *= scale
            sim = np.exp(d, out=d)
        # drop self-matches
        sim[np.arange(len(blk)), lo + np.arange(len(blk))] = 0.0
        total += sim.sum()
    return total / (count * (count - 1))


def fuzzy_entropy(x, p: FeParams | None = None) -> float:
    """``ln(phi_m / phi_{m+1})`` with Gaussian-shaped membership ``exp(-ln2 (d/r)^2)``.

    Distances are Chebyshev between mean-removed delay vectors, self-matches
    excluded.
    """
    p = p or FeParams()
    x = np.asarray(x, dtype=np.float64)
    if p.max_points is not None and len(x) > p.max_points:
        x = x[:p.max_points]
    if len(x) <= p.m + 1:
        raise ValueError(f"fuzzy entropy needs more than m + 1 = {p.m + 1} samples")
    r = p.r if p.r is not None else p.r_factor * float(x.std())
    return float(math.log(_phi(x, p.m, r) / _phi(x, p.m + 1, r)))


BUCKET_WIDTH = 0.1
N_BUCKETS = 10


def fe_bucket(fe: float) -> int:
    """Group id for an entropy value: 1 is [0, 0.1], g > 1 is (0.1(g-1), 0.1g]."""
    g = math.ceil(round(fe / BUCKET_WIDTH, 9))
    return min(N_BUCKETS, max(1, g))


@dataclass
class FeatureGrouping:
    groups: dict[int, list[str]]
    intervals: dict[int, tuple[float, float]]
    new_features: dict[int, np.ndarray]
    fe_values: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "intervals": {str(g): list(v) for g, v in self.intervals.items()},
            "groups": {str(g): v for g, v in self.groups.items()},
            "fe_values": self.fe_values,
        }


def group_imfs(imfs: dict[str, np.ndarray], p: FeParams | None = None,
               fe_values: dict[str, float] | None = None) -> FeatureGrouping:
    """Bucket IMFs by fuzzy entropy in 0.1-wide bins and average each bucket.

    Values outside [0, 1] are clipped into the end buckets with a warning.
    Empty buckets are left out.
    """
    fe = dict(fe_values) if fe_values is not None else {k: fuzzy_entropy(v, p) for k, v in imfs.items()}
    groups: dict[int, list[str]] = {}
    for name in imfs:
        v = fe[name]
        if v > 1.0 or v < 0.0:
            log.warning("FE of %s is %.4f, outside [0, 1]; clipped into an end bucket", name, v)
        groups.setdefault(fe_bucket(v), []).append(name)
    groups = dict(sorted(groups.items()))
    intervals = {g: (round(BUCKET_WIDTH * (g - 1), 10), round(BUCKET_WIDTH * g, 10)) for g in groups}
    new = {g: np.mean([imfs[m] for m in members], axis=0) for g, members in groups.items()}
    return FeatureGrouping(groups, intervals, new, {k: float(fe[k]) for k in imfs})


@dataclass
class ReconstructionMap:
    entries: dict[int, tuple[int, list[tuple[str, float]]]]
    threshold: float
    heatmap: np.ndarray          # (n_new_features, n_indicators)
    row_ids: list[int]
    col_names: list[str]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "entries": {str(k): {"new_feature": nf, "included": [[m, c] for m, c in inc]}
                        for k, (nf, inc) in self.entries.items()},
        }

    def write_heatmap_csv(self, path) -> None:
        lines = ["new_feature," + ",".join(self.col_names)]
        for gid, row in zip(self.row_ids, self.heatmap):
            lines.append(f"NF{gid}," + ",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


def _zscore(x: np.ndarray, fit: slice | np.ndarray) -> np.ndarray:
    ref = x[fit]
    sd = ref.std()
    if not sd > 0:
        raise ValueError("cannot standardize a factor that is constant on the fit rows")
    return (x - ref.mean()) / sd


def reconstruct_features(grouping: FeatureGrouping, indicators: dict[str, np.ndarray],
                         est: MicEstimator | None = None, threshold: float = 0.5,
                         fit_rows: slice | np.ndarray = slice(None),
                         scores: np.ndarray | None = None) -> tuple[dict[int, np.ndarray], ReconstructionMap]:
    """Weight each new feature by the indicators it shares information with.

    ``RCF_N = NF_N * prod_M z(RMF_M * C_NM)`` over indicators with
    ``C_NM >= threshold``, re-standardized; an empty inclusion set leaves the
    new feature unchanged. Scores and standardization use ``fit_rows`` only.
    ``scores`` overrides the computed heatmap (rows follow the grouping order).
    """
    names = list(indicators)
    row_ids = list(grouping.new_features)
    if scores is None:
        scores = np.array([[mic(grouping.new_features[g][fit_rows], indicators[m][fit_rows], est)
                            for m in names] for g in row_ids]).reshape(len(row_ids), len(names))
    out, entries = {}, {}
    for i, g in enumerate(row_ids):
        nf = grouping.new_features[g]
        included = [(m, float(scores[i, j])) for j, m in enumerate(names) if scores[i, j] >= threshold]
        if not included:
            log.warning("no indicator reaches %.2f for new feature %d; passing it through", threshold, g)
            out[g] = nf.copy()
        else:
            prod = nf.copy()
            for m, c in included:
                prod = prod * _zscore(indicators[m] * c, fit_rows)
            out[g] = _zscore(prod, fit_rows)
        entries[g] = (g, included)
    return out, ReconstructionMap(entries, threshold, scores, row_ids, names)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
