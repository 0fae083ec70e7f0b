"""Decoherence, entropy production and tunnelling in a driven quartic double well."""

__version__ = "0.1.0"
