"""Secant-based density ratio estimation with interval annealing."""

__version__ = "0.1.0"
