"""Synthetic pixel-aligned radio maps on camera-visible surfaces."""
__version__ = "0.1.0"
