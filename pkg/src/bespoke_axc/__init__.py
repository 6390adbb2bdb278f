"""Approximate bespoke circuits for small ML classifiers."""

__version__ = "0.1.0"
