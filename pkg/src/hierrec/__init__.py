"""Hierarchical contrastive video-language recognition head on a numpy tape."""

__version__ = "0.1.0"
