"""Lattice-based forward-secure blind signatures."""

__version__ = "0.1.0"
