"""Samplers for convex bodies and exact positivity checks of their Markov operators."""

__version__ = "0.1.0"
