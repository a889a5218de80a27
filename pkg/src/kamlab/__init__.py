"""Weak KAM solutions, Lax-Oleinik operators on measures and singular flows on the circle."""

__version__ = "0.1.0"
