"""Multilinear low-rank HAR modeling of realized volatility."""

__version__ = "0.1.0"
