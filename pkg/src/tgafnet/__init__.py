"""Temporal group alignment and fusion network for compressed-video enhancement."""

__version__ = "0.1.0"
