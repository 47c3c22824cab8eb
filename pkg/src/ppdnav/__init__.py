"""Warehouse grid navigation: Dijkstra-bootstrapped policy learning with
classical and Q-learning baselines."""

__version__ = "0.1.0"
