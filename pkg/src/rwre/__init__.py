"""Ballistic random walks in i.i.d. random environments: simulation and exact DP."""

__version__ = "0.1.0"
