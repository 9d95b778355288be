"""Simulation and analysis of DC microgrids with consensus-based secondary control."""

__version__ = "0.1.0"
