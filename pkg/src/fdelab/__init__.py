"""Numerical laboratory for fast diffusion, its rescaled flow and asymptotic profiles."""

__version__ = "0.1.0"
