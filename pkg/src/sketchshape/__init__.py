"""Sketch-and-text conditioned part-level 3D shape generation and editing."""

__version__ = "0.1.0"
