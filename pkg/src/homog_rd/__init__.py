"""Periodic homogenization toolkit for reaction-diffusion problems with a large centered reaction."""

__version__ = "0.1.0"
