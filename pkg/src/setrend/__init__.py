"""Cooperative set aggregation of networked two-link manipulators."""

__version__ = "0.1.0"
