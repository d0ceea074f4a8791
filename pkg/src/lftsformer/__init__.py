"""Decomposition-fused sparse-attention forecasting for bar data."""

__version__ = "0.1.0"
