"""Subgroup true-positive-rate disparity audits for multi-label classifiers."""

__version__ = "0.1.0"
