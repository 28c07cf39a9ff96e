"""Conditional information flow maximization for text representation learning."""

__version__ = "0.1.0"
