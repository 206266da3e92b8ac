"""Modular quasi-velocity dynamics and simulation of multi-legged robots."""

__version__ = "0.1.0"
