"""Differentially private linear contrastive learning laboratory."""

__version__ = "0.1.0"
