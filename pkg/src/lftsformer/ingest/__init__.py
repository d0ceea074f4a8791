"""Bar loading, the indicator bank, transforms and windowing."""
from .bars import (MARK_VOCAB, Bar, BarOrderError, BarParseError, BarSeries, load_csv,
                   synthetic_bars, time_marks, write_csv)
from .frame import (FeatureFrame, SizingError, StandardizationStats, WindowedDataset,
                    ZeroVarianceError, log_diff, split_and_window, split_point, standardize,
                    undo_log_diff, unstandardize, windows)
from .indicators import (PRICE_COLUMNS, IndicatorConfig, atr, basic_and_sum_features, cci,
                         dema, feature_bank, returns, roc, rsi, stochastic_oscillator,
                         true_range, true_range_series, warmup, williams_r)


def build_frame(bars: BarSeries, cfg: IndicatorConfig | None = None) -> FeatureFrame:
    """Compute the feature bank on raw prices and wrap it in a frame."""
    return FeatureFrame(bars.time.copy(), feature_bank(bars, cfg))


__all__ = [
    "Bar", "BarSeries", "BarParseError", "BarOrderError", "load_csv", "write_csv", "synthetic_bars",
    "time_marks", "MARK_VOCAB", "FeatureFrame", "StandardizationStats", "WindowedDataset",
    "SizingError", "ZeroVarianceError", "log_diff", "undo_log_diff", "standardize", "unstandardize",
    "split_and_window", "windows", "split_point", "IndicatorConfig", "PRICE_COLUMNS", "atr", "cci", "dema",
    "feature_bank", "returns", "roc", "rsi", "stochastic_oscillator", "true_range",
    "true_range_series", "warmup", "williams_r", "basic_and_sum_features", "build_frame",
]
