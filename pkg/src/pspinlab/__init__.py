"""Exact-oracle laboratory for mixed p-spin spin glasses."""

__version__ = "0.1.0"
