"""Spatially homogeneous Boltzmann equation on characteristic functions."""

__version__ = "0.1.0"
