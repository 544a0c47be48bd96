"""Pinned Brownian motion on closed embedded manifolds: kernels, Chernoff products and path densities."""

__version__ = "0.1.0"
