"""Shuffle algebra, rough paths, controlled paths and rough differential equations."""

__version__ = "0.1.0"
