"""Handwritten text-line segmentation by per-pixel line counting."""

__version__ = "0.1.0"
