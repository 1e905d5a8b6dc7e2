"""Temporal-convolution motion prediction for tracking by detection, on a numpy autodiff core."""

__version__ = "0.1.0"
