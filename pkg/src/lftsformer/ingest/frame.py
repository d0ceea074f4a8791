from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bars import time_marks


class ZeroVarianceError(ValueError):
    """A column cannot be standardized because it is constant on the training rows."""


class SizingError(ValueError):
    pass


@dataclass
class FeatureFrame:
    """Named real columns over a shared timestamp index.

    ``mask[name][t]`` is True where the cell is usable; invalid cells hold NaN.
    """

    index: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    mask: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.index)
        for name, col in self.columns.items():
            if len(col) != n:
                raise ValueError(f"column {name!r} has length {len(col)}, index has {n}")
            if name not in self.mask:
                self.mask[name] = np.isfinite(col)

    def __len__(self) -> int:
        return len(self.index)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def add(self, name: str, values: np.ndarray, mask: np.ndarray | None = None) -> None:
        values = np.asarray(values, dtype=np.float64)
        if len(values) != len(self.index):
            raise ValueError(f"column {name!r} has wrong length")
        self.columns[name] = values
        self.mask[name] = np.isfinite(values) if mask is None else (np.asarray(mask, bool) & np.isfinite(values))

    def select(self, names) -> "FeatureFrame":
        return FeatureFrame(self.index.copy(), {n: self.columns[n] for n in names},
                            {n: self.mask[n] for n in names})

    def rows(self, start: int, stop: int) -> "FeatureFrame":
        return FeatureFrame(self.index[start:stop],
                            {n: c[start:stop] for n, c in self.columns.items()},
                            {n: m[start:stop] for n, m in self.mask.items()})

    def first_fully_valid(self, names=None) -> int:
        names = self.names if names is None else names
        ok = np.logical_and.reduce([self.mask[n] for n in names])
        bad = np.flatnonzero(~ok)
        # rows after the last invalid cell are all valid
        return 0 if len(bad) == 0 else int(bad[-1]) + 1

    def matrix(self, names=None) -> np.ndarray:
        names = self.names if names is None else names
        return np.column_stack([self.columns[n] for n in names])

    def to_csv(self, path) -> None:
        """Write values with a ``<name>_valid`` 0/1 sidecar per column."""
        names = self.names
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [h for n in names for h in (n, f"{n}_valid")])
            for i in range(len(self)):
                row = [int(self.index[i])]
                for n in names:
                    v = self.columns[n][i]
                    row += ["" if np.isnan(v) else repr(float(v)), int(self.mask[n][i])]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "FeatureFrame":
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = list(reader)
        names = header[1::2]
        index = np.array([int(r[0]) for r in data], dtype=np.int64)
        cols, mask = {}, {}
        for j, n in enumerate(names):
            cols[n] = np.array([float(r[1 + 2 * j]) if r[1 + 2 * j] else np.nan for r in data])
            mask[n] = np.array([r[2 + 2 * j] == "1" for r in data])
        return cls(index, cols, mask)


def log_diff(closes: np.ndarray) -> np.ndarray:
    closes = np.asarray(closes, dtype=np.float64)
    if np.any(~(closes > 0)):
        raise ValueError("log_diff needs strictly positive prices")
    out = np.full(len(closes), np.nan)
    out[1:] = np.log(closes[1:] / closes[:-1])
    return out


def undo_log_diff(logret: np.ndarray, first: float) -> np.ndarray:
    """Rebuild prices from ``first`` and the log returns that follow it."""
    return first * np.exp(np.concatenate([[0.0], np.cumsum(logret)]))


@dataclass
class StandardizationStats:
    mean: dict[str, float]
    var: dict[str, float]

    @classmethod
    def fit(cls, frame: FeatureFrame, train_rows: slice | np.ndarray, names=None) -> "StandardizationStats":
        names = frame.names if names is None else names
        mean, var = {}, {}
        for n in names:
            col = frame.columns[n][train_rows]
            ok = frame.mask[n][train_rows]
            vals = col[ok]
            if len(vals) == 0:
                raise ZeroVarianceError(f"column {n!r} has no valid training rows")
            m = float(vals.mean())
            v = float(((vals - m) ** 2).mean())
            if not v > 1e-300 or np.ptp(vals) == 0:
                raise ZeroVarianceError(f"column {n!r} is constant on the training rows")
            mean[n], var[n] = m, v
        return cls(mean, var)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "var": self.var}


def standardize(frame: FeatureFrame, stats: StandardizationStats) -> FeatureFrame:
    out = FeatureFrame(frame.index.copy())
    for n in frame.names:
        if n not in stats.mean:
            raise ZeroVarianceError(f"no statistics for column {n!r}")
        out.add(n, (frame.columns[n] - stats.mean[n]) / np.sqrt(stats.var[n]), frame.mask[n])
    return out


def unstandardize(values: np.ndarray, stats: StandardizationStats, name: str) -> np.ndarray:
    return np.asarray(values) * np.sqrt(stats.var[name]) + stats.mean[name]


@dataclass
class WindowedDataset:
    inputs: np.ndarray        # (samples, seq_len, d_x)
    targets: np.ndarray       # (samples, pred_len)
    time_marks: np.ndarray    # (samples, seq_len, 5)
    target_marks: np.ndarray  # (samples, pred_len, 5)
    starts: np.ndarray        # row index of each window's first input step

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.inputs[idx], self.targets[idx], self.time_marks[idx],
                               self.target_marks[idx], self.starts[idx])


def split_point(n_rows: int, ratio: float) -> int:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    return int(round(n_rows * ratio))


def _windows(x: np.ndarray, y: np.ndarray, marks: np.ndarray, lo: int, hi: int,
             seq_len: int, pred_len: int) -> WindowedDataset:
    count = hi - lo - seq_len - pred_len + 1
    if count <= 0:
        raise SizingError(f"{hi - lo} rows cannot hold a window of {seq_len}+{pred_len}")
    starts = lo + np.arange(count)
    inp_idx = starts[:, None] + np.arange(seq_len)
    tgt_idx = starts[:, None] + seq_len + np.arange(pred_len)
    return WindowedDataset(x[inp_idx], y[tgt_idx], marks[inp_idx], marks[tgt_idx], starts)


def windows(frame: FeatureFrame, config, target: str, inputs=None, start: int = 0,
            stop: int | None = None) -> WindowedDataset:
    """Stride-1 windows drawn from rows ``start:stop`` only."""
    inputs = frame.names if inputs is None else list(inputs)
    stop = len(frame) if stop is None else stop
    x = frame.matrix(inputs)
    marks = time_marks(frame.index)
    return _windows(x, frame.columns[target], marks, start, stop, config.seq_len, config.pred_len)


def split_and_window(frame: FeatureFrame, config, target: str, inputs=None,
                     ratio: float = 0.9) -> tuple[WindowedDataset, WindowedDataset]:
    """Chronological split, then stride-1 windows inside each side.

    ``config`` needs ``seq_len`` and ``pred_len``. No window spans the split,
    so every training row index is below every test row index.
    """
    n = len(frame)
    if n < config.seq_len + config.pred_len:
        raise SizingError(f"series of {n} rows is shorter than seq_len + pred_len = "
                          f"{config.seq_len + config.pred_len}")
    cut = split_point(n, ratio)
    return (windows(frame, config, target, inputs, 0, cut),
            windows(frame, config, target, inputs, cut, n))
