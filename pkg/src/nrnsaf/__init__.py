"""Noise-robust normalised subband adaptive filtering and its mean-square theory."""

__version__ = "0.1.0"
