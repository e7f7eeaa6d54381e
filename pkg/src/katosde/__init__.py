"""Numerical laboratory for SDEs with Kato-class singular drift."""

__version__ = "0.1.0"
