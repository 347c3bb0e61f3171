"""Divergence-regularized optimal transport and the statistics of its empirical cost."""

__version__ = "0.1.0"
