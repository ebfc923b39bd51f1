"""Similarity profiles for nonlinear diffusion equations and reduced reaction-diffusion systems."""

__version__ = "0.1.0"
