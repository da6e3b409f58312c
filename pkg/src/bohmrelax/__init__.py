"""Quantum relaxation of two coupled oscillators under pilot-wave dynamics."""
__version__ = "0.1.0"
