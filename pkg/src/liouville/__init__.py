"""Singular mean-field Liouville equation on triangulated surfaces."""

__version__ = "0.1.0"
