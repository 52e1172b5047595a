"""Tabular equilibrium learning for simultaneous-move stochastic games."""

__version__ = "0.1.0"
