"""Sparse discourse atoms over word embeddings."""

__version__ = "0.1.0"
