"""Adaptive social learning simulation and steady-state verification."""

__version__ = "0.1.0"
