"""Semantic-embedding guidance for multi-label pattern classification."""

__version__ = "0.1.0"
