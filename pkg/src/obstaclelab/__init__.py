"""Obstacle-problem and Stefan-problem free-boundary laboratory."""

__version__ = "0.1.0"
