"""Optimal control of path-dependent piecewise deterministic processes."""

__version__ = "0.1.0"
