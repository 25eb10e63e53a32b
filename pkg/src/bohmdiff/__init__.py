"""Bohmian trajectories in charged-particle diffraction from a crystalline target."""

__version__ = "0.1.0"
