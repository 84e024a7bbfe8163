"""Learned compressive codec for paired volume-visualization images."""

__version__ = "0.1.0"
