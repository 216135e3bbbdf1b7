"""Smooth partition-of-unity finite element regularisation of particle fields."""

__version__ = "0.1.0"
