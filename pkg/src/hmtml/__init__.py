"""Heterogeneous multi-task metric learning."""

__version__ = "0.1.0"
