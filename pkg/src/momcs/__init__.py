"""Robust compressed sensing with generative priors via median-of-means."""

__version__ = "0.1.0"
