"""Optimal transport, entropy functionals and Brownian semigroups for
stationary point patterns, with a Monte Carlo verification harness."""

__version__ = "0.1.0"
