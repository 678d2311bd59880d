"""Attribute-guided ground-pressure sequence transfer."""
__version__ = "0.1.0"
