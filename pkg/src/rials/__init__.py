"""Randomly initialized alternating least squares for Gaussian matrix sensing."""

__version__ = "0.1.0"
