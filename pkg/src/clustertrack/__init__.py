"""Projected gradient-tracking for constrained multi-cluster games."""

__version__ = "0.1.0"
