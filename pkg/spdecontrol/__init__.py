"""Null controllability laboratory for the stochastic semilinear heat equation."""

__version__ = "0.1.0"
