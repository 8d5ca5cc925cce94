"""Autoregressive normalising-flow motion model with live steering."""

__version__ = "0.1.0"
