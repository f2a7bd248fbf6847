"""Multimodal camera-pose posteriors with a conditional VAE."""

__version__ = "0.1.0"
