"""Finite difference schemes for linear stochastic integro-differential equations."""

__version__ = "0.1.0"
