"""Unsupervised detection and prioritisation of anomalous purchase transactions."""

__version__ = "0.1.0"
