"""Hybrid graph outlier exposure for unsupervised graph-level OOD detection."""

__version__ = "0.1.0"
