"""Adaptive diffusion estimation over networks."""
