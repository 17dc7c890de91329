"""Numerical laboratory for intersection measures of killed Brownian motions in a box."""

__version__ = "0.1.0"
