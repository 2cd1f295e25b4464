"""Exact and sampled checks of higher-order concentration for weakly dependent finite systems."""

__version__ = "0.1.0"
