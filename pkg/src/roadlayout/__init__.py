"""Parametric top-view road scenes: sampling, rendering, CRF inference and evaluation."""

__version__ = "0.1.0"
