"""Raw OHLCV bar loading.

Bars are stored as a struct-of-arrays (:class:`BarSeries`) since every
downstream consumer works column-wise; :class:`Bar` is the row view used by
the loader and tests.
"""
from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

COLUMNS = ("time", "open", "high", "low", "close", "volume", "amount")


class BarParseError(ValueError):
    """A CSV row could not be turned into a bar."""


class BarOrderError(ValueError):
    """Timestamps are not strictly increasing."""


@dataclass(frozen=True)
class Bar:
    time: int  # yyyymmddHHMM
    open: float
    high: float
    low: float
    close: float
    volume: float
    amount: float


@dataclass(frozen=True)
class BarSeries:
    time: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    amount: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    @classmethod
    def from_bars(cls, bars) -> "BarSeries":
        bars = list(bars)
        return cls(
            time=np.array([b.time for b in bars], dtype=np.int64),
            **{c: np.array([getattr(b, c) for b in bars], dtype=np.float64) for c in COLUMNS[1:]},
        )

    def bars(self) -> list[Bar]:
        return [
            Bar(int(self.time[i]), *(float(getattr(self, c)[i]) for c in COLUMNS[1:]))
            for i in range(len(self))
        ]

    def slice(self, start: int, stop: int) -> "BarSeries":
        return BarSeries(**{c: getattr(self, c)[start:stop] for c in COLUMNS})


def parse_timestamp(stamp: int) -> _dt.datetime:
    return _dt.datetime.strptime(f"{int(stamp):012d}", "%Y%m%d%H%M")


def format_timestamp(moment: _dt.datetime) -> int:
    return int(moment.strftime("%Y%m%d%H%M"))


def _parse_row(row: list[str], lineno: int) -> Bar:
    if len(row) != len(COLUMNS):
        raise BarParseError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(row)}")
    try:
        stamp = int(row[0].strip())
        parse_timestamp(stamp)
        values = [float(v) for v in row[1:]]
    except ValueError as exc:
        raise BarParseError(f"line {lineno}: {exc}") from None
    o, h, lo, c, vol, amt = values
    if not all(np.isfinite(values)):
        raise BarParseError(f"line {lineno}: non-finite value")
    if min(o, h, lo, c) <= 0 or vol < 0 or amt < 0:
        raise BarParseError(f"line {lineno}: prices must be > 0 and volume/amount >= 0")
    if not (lo <= o <= h and lo <= c <= h):
        raise BarParseError(f"line {lineno}: violates low <= open/close <= high")
    return Bar(stamp, o, h, lo, c, vol, amt)


def load_csv(path) -> list[Bar]:
    """Read bars from ``time,open,high,low,close,volume,amount`` rows.

    A header line is optional. Rows must already be in strictly increasing
    time order; the loader refuses to silently reorder a feed.
    """
    bars: list[Bar] = []
    with open(Path(path), newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "time":
                continue
            bar = _parse_row(row, lineno)
            if bars and bar.time <= bars[-1].time:
                kind = "duplicate" if bar.time == bars[-1].time else "out-of-order"
                raise BarOrderError(f"line {lineno}: {kind} timestamp {bar.time}")
            bars.append(bar)
    return bars


def write_csv(path, bars: BarSeries) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for i in range(len(bars)):
            w.writerow([int(bars.time[i])] + [repr(float(getattr(bars, c)[i])) for c in COLUMNS[1:]])


def time_marks(times: np.ndarray) -> np.ndarray:
    """Calendar fields per timestamp: minute, hour, weekday, day, month."""
    out = np.empty((len(times), 5), dtype=np.int64)
    for i, stamp in enumerate(times):
        d = parse_timestamp(int(stamp))
        out[i] = (d.minute, d.hour, d.weekday(), d.day, d.month)
    return out


MARK_VOCAB = (60, 24, 7, 32, 13)


def synthetic_bars(n: int = 8000, seed: int = 0, phi: float = 0.8, noise: float = 2.0,
                   amplitudes=(3.0, 2.0), periods=(50.0, 16.0), scale: float = 1e-3,
                   start: str = "202001020930", step_minutes: int = 30) -> BarSeries:
    """Seeded stand-in for a real 30-minute bar feed.

    Log returns of the close follow ``scale * s_t`` with ``s`` an AR(1) process
    plus two sinusoids plus white noise, so the close column carries a
    forecastable component after log-differencing.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    ar = np.zeros(n)
    shocks = rng.standard_normal(n)
    for t in range(1, n):
        ar[t] = phi * ar[t - 1] + shocks[t]
    t_idx = np.arange(n)
    s = ar + noise * rng.standard_normal(n)
    for a, p in zip(amplitudes, periods):
        s += a * np.sin(2 * np.pi * t_idx / p)
    logret = scale * s
    close = 100.0 * np.exp(np.cumsum(logret))
    prev = np.concatenate([[100.0], close[:-1]])
    open_ = prev * np.exp(scale * 0.3 * rng.standard_normal(n))
    wick = np.abs(rng.standard_normal((2, n))) * scale
    high = np.maximum(open_, close) * np.exp(wick[0])
    low = np.minimum(open_, close) * np.exp(-wick[1])
    volume = np.round(rng.lognormal(11.0, 0.5, n))
    amount = np.round(volume * (open_ + high + low + close) / 4.0)

    t0 = parse_timestamp(int(start))
    step = _dt.timedelta(minutes=step_minutes)
    times = np.array([format_timestamp(t0 + i * step) for i in range(n)], dtype=np.int64)
    return BarSeries(time=times, open=open_, high=high, low=low, close=close,
                     volume=volume, amount=amount)
