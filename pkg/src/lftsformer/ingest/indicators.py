"""The 29-column feature bank (8 basic + 21 advanced indicators).

All functions take raw (untransformed) prices and return float arrays of the
input length, with ``NaN`` marking warm-up or undefined cells.

Windows the source tables leave as "1" for multi-bar indicators are
conventions, set in :class:`IndicatorConfig`:

* Williams %R over 14 bars, ``-100 * (HH - close) / (HH - LL)``
* DEMA over 10 bars, ``2 * EMA - EMA(EMA)`` with ``alpha = 2 / (N + 1)``,
  EMA seeded with the first observation
* rolling Pearson correlation of MA5 and MA30 over 30 bars
* CCI over 14 bars
* Sum3 / Sum5 are rolling sums of the close
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bars import BarSeries


@dataclass(frozen=True)
class IndicatorConfig:
    return_lags: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    rsi_windows: tuple[int, ...] = (6, 14)
    roc_windows: tuple[int, ...] = (9, 14)
    atr_windows: tuple[int, ...] = (5, 10)
    williams_window: int = 14
    dema_window: int = 10
    cci_window: int = 14
    corr_fast: int = 5
    corr_slow: int = 30
    corr_window: int = 30
    stochastic_window: int = 14
    include_stochastic: bool = False
    extra: dict = field(default_factory=dict)


def _nan(n: int) -> np.ndarray:
    return np.full(n, np.nan)


def rolling_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing simple moving average; NaN until ``window`` values exist.

    NaNs inside the input propagate to every window that touches them.
    """
    x = np.asarray(x, dtype=np.float64)
    out = _nan(len(x))
    if window < 1:
        raise ValueError("window must be >= 1")
    if window <= len(x):
        out[window - 1:] = sliding_window_view(x, window).mean(axis=-1)
    return out


def rolling_sum(x: np.ndarray, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = _nan(len(x))
    if window <= len(x):
        out[window - 1:] = sliding_window_view(x, window).sum(axis=-1)
    return out


def _shift(x: np.ndarray, lag: int) -> np.ndarray:
    out = _nan(len(x))
    if lag < len(x):
        out[lag:] = x[:len(x) - lag]
    return out


def true_range(bars: BarSeries, t: int) -> float:
    if t < 1:
        raise IndexError("true range needs a previous close (t >= 1)")
    h, lo, pc = bars.high[t], bars.low[t], bars.close[t - 1]
    return float(max(h - lo, h - pc, pc - lo))


def true_range_series(bars: BarSeries) -> np.ndarray:
    pc = _shift(bars.close, 1)
    tr = np.maximum.reduce([bars.high - bars.low, bars.high - pc, pc - bars.low])
    tr[0] = np.nan
    return tr


def atr(bars: BarSeries, window: int) -> np.ndarray:
    return rolling_mean(true_range_series(bars), window)


def rsi(closes: np.ndarray, window: int) -> np.ndarray:
    """Relative strength index with simple moving averages of moves.

    When the average down-move is zero the index is 100, when the average
    up-move is zero it is 0, and a perfectly flat window gives 50.
    """
    closes = np.asarray(closes, dtype=np.float64)
    diff = closes - _shift(closes, 1)
    up = np.where(diff > 0, diff, 0.0)
    down = np.where(diff < 0, -diff, 0.0)
    up[0] = down[0] = np.nan
    mu, md = rolling_mean(up, window), rolling_mean(down, window)
    out = _nan(len(closes))
    ok = ~np.isnan(mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        general = 100.0 - 100.0 / (1.0 + mu / md)
    out[ok] = general[ok]
    out[ok & (md == 0)] = 100.0
    out[ok & (mu == 0) & (md > 0)] = 0.0
    out[ok & (mu == 0) & (md == 0)] = 50.0
    return out


def returns(closes: np.ndarray, lag: int) -> np.ndarray:
    if not 1 <= lag:
        raise ValueError("lag must be >= 1")
    closes = np.asarray(closes, dtype=np.float64)
    return closes - _shift(closes, lag)


def roc(closes: np.ndarray, window: int) -> np.ndarray:
    closes = np.asarray(closes, dtype=np.float64)
    prev = _shift(closes, window)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 100.0 * (closes / prev - 1.0)
    out[~(prev > 0)] = np.nan
    return out


def stochastic_k(bars: BarSeries) -> np.ndarray:
    span = bars.high - bars.low
    with np.errstate(divide="ignore", invalid="ignore"):
        k = 100.0 * (bars.close - bars.low) / span
    return np.where(span == 0, 50.0, k)


def stochastic_oscillator(bars: BarSeries, window: int) -> np.ndarray:
    return rolling_mean(stochastic_k(bars), window)


def cci(bars: BarSeries, window: int) -> np.ndarray:
    """Commodity channel index in the signed-deviation form.

    ``MD`` is the moving average of ``MC - close`` (not of its absolute
    value); cells where it is exactly zero are invalid.
    """
    if window < 2:
        raise ValueError("cci window must be >= 2")
    tp = (bars.high + bars.low + bars.close) / 3.0
    mc = rolling_mean(bars.close, window)
    md = rolling_mean(mc - bars.close, window)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (tp - mc) / (0.015 * md)
    out[~np.isfinite(out) | (md == 0)] = np.nan
    return out


def ema(x: np.ndarray, window: int) -> np.ndarray:
    alpha = 2.0 / (window + 1.0)
    out = np.empty(len(x))
    acc = x[0]
    for i, v in enumerate(x):
        acc = v if i == 0 else alpha * v + (1.0 - alpha) * acc
        out[i] = acc
    return out


def dema(closes: np.ndarray, window: int) -> np.ndarray:
    closes = np.asarray(closes, dtype=np.float64)
    e1 = ema(closes, window)
    out = 2.0 * e1 - ema(e1, window)
    out[: max(0, 2 * window - 2)] = np.nan
    return out


def williams_r(bars: BarSeries, window: int) -> np.ndarray:
    out = _nan(len(bars))
    if window > len(bars):
        return out
    hh = sliding_window_view(bars.high, window).max(axis=-1)
    ll = sliding_window_view(bars.low, window).min(axis=-1)
    span = hh - ll
    with np.errstate(divide="ignore", invalid="ignore"):
        val = -100.0 * (hh - bars.close[window - 1:]) / span
    out[window - 1:] = np.where(span == 0, np.nan, val)
    return out


def rolling_corr(a: np.ndarray, b: np.ndarray, window: int) -> np.ndarray:
    out = _nan(len(a))
    if window > len(a):
        return out
    wa, wb = sliding_window_view(a, window), sliding_window_view(b, window)
    da = wa - wa.mean(axis=-1, keepdims=True)
    db = wb - wb.mean(axis=-1, keepdims=True)
    num = (da * db).sum(axis=-1)
    den = np.sqrt((da * da).sum(axis=-1) * (db * db).sum(axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    out[window - 1:] = np.where(den > 0, r, np.nan)
    return out


def basic_and_sum_features(bars: BarSeries, cfg: IndicatorConfig | None = None) -> dict[str, np.ndarray]:
    cfg = cfg or IndicatorConfig()
    with np.errstate(divide="ignore", invalid="ignore"):
        wp = np.where(bars.volume > 0, bars.amount / bars.volume, np.nan)
    sum3 = rolling_sum(bars.close, 3)
    sum5 = rolling_sum(bars.close, 5)
    radicand = sum5 ** 2 - sum3 ** 2
    with np.errstate(invalid="ignore"):
        root = np.where(radicand >= 0, np.sqrt(np.abs(radicand)), np.nan)
    ma_fast = rolling_mean(bars.close, cfg.corr_fast)
    ma_slow = rolling_mean(bars.close, cfg.corr_slow)
    return {
        "weighted_price": wp,
        "high_low": bars.high - bars.low,
        "sum3": sum3,
        "sum5": sum5,
        "sum5_minus_sum3": sum5 - sum3,
        "abs_sum5_minus_sum3": np.abs(sum5 - sum3),
        "sqrt_sum5_sq_minus_sum3_sq": root,
        "corr_ma5_ma30": rolling_corr(ma_fast, ma_slow, cfg.corr_window),
        "williams_r": williams_r(bars, cfg.williams_window),
        "dema": dema(bars.close, cfg.dema_window),
    }


PRICE_COLUMNS = ("open", "high", "low", "close")


def feature_bank(bars: BarSeries, cfg: IndicatorConfig | None = None) -> dict[str, np.ndarray]:
    """All 29 columns, in a fixed order (4 prices first)."""
    cfg = cfg or IndicatorConfig()
    extra = basic_and_sum_features(bars, cfg)
    cols: dict[str, np.ndarray] = {name: getattr(bars, name).astype(np.float64) for name in PRICE_COLUMNS}
    cols["weighted_price"] = extra["weighted_price"]
    cols["volume"] = bars.volume.astype(np.float64)
    cols["amount"] = bars.amount.astype(np.float64)
    cols["high_low"] = extra["high_low"]
    for lag in cfg.return_lags:
        cols[f"return_{lag}"] = returns(bars.close, lag)
    cols["corr_ma5_ma30"] = extra["corr_ma5_ma30"]
    for name in ("sum3", "sum5", "sum5_minus_sum3", "abs_sum5_minus_sum3", "sqrt_sum5_sq_minus_sum3_sq"):
        cols[name] = extra[name]
    for w in cfg.rsi_windows:
        cols[f"rsi_{w}"] = rsi(bars.close, w)
    for w in cfg.roc_windows:
        cols[f"roc_{w}"] = roc(bars.close, w)
    cols["williams_r"] = extra["williams_r"]
    for w in cfg.atr_windows:
        cols[f"atr_{w}"] = atr(bars, w)
    cols["cci"] = cci(bars, cfg.cci_window)
    cols["dema"] = extra["dema"]
    if cfg.include_stochastic:
        cols["stochastic"] = stochastic_oscillator(bars, cfg.stochastic_window)
    return cols


def warmup(cfg: IndicatorConfig | None = None) -> dict[str, int]:
    """First index at which each bank column can be valid."""
    cfg = cfg or IndicatorConfig()
    w = {name: 0 for name in PRICE_COLUMNS + ("weighted_price", "volume", "amount", "high_low")}
    w.update({f"return_{i}": i for i in cfg.return_lags})
    w["corr_ma5_ma30"] = cfg.corr_slow - 1 + cfg.corr_window - 1
    w.update(sum3=2, sum5=4, sum5_minus_sum3=4, abs_sum5_minus_sum3=4, sqrt_sum5_sq_minus_sum3_sq=4)
    w.update({f"rsi_{n}": n for n in cfg.rsi_windows})
    w.update({f"roc_{n}": n for n in cfg.roc_windows})
    w["williams_r"] = cfg.williams_window - 1
    w.update({f"atr_{n}": n for n in cfg.atr_windows})
    w["cci"] = 2 * cfg.cci_window - 2
    w["dema"] = 2 * cfg.dema_window - 2
    if cfg.include_stochastic:
        w["stochastic"] = cfg.stochastic_window - 1
    return w
