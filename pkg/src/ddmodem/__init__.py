"""Learned matrix-form modems for doubly-dispersive channels."""
__version__ = "0.1.0"
