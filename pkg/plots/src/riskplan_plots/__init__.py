"""Offline figure generation from planner/simulation output files."""

__version__ = "0.1.0"
