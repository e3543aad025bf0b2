"""Bayesian optimization with swappable surrogate models and a benchmark harness."""

__version__ = "0.1.0"
