"""Solvers for the cyclically symmetric multi-marginal transport problem on finite supports."""

__version__ = "0.1.0"
