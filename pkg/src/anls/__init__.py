"""Desk-scale numerical laboratory for the Schrodinger equation with
multiplicative spatial white noise on a periodic box."""

from . import dynamics, gamma, harness, lattice, lpcalc, noise

__all__ = ["dynamics", "gamma", "harness", "lattice", "lpcalc", "noise"]
__version__ = "0.1.0"
