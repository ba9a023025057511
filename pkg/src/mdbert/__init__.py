"""Hierarchical transformer for multi-label classification of long documents."""

__version__ = "0.1.0"
