"""Numerical laboratory for discretized measures on lines and convex planar curves."""

__version__ = "0.1.0"
