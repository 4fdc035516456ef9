"""Quantum rate-distortion toolkit for ensemble sources."""

__version__ = "0.1.0"
