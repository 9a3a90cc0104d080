"""Simulation toolkit for magnetically deflected soft continuum robots."""

__version__ = "0.1.0"
