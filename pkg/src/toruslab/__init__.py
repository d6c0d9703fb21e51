"""Numerical laboratory for torus-invariant Kahler potentials."""

__version__ = "0.1.0"
