"""Coupled simulation of SDEs with Hölder drift: Euler and Milstein-type schemes on a shared Brownian lattice."""

__version__ = "0.1.0"
