"""Coarse-to-fine lightweight meta-embedding learning for ID-based recommendation."""

__version__ = "0.1.0"
