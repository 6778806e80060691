"""Diffusion-based category-level NOCS pose estimation at desk scale."""

__version__ = "0.1.0"
