"""Gibbs samplers for commuting lattice Hamiltonians and the numerics of their spectral gaps."""

__version__ = "0.1.0"
