"""Spectral supertoken clustering and token classification for hyperspectral cubes."""

__version__ = "0.1.0"
