"""Layered synthetic video generation with amodal masks, depth order and optical flow."""

__version__ = "0.1.0"
