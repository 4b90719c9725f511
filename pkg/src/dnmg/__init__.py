"""Robust partitioning and real-time operation of dynamic networked microgrids."""

__version__ = "0.1.0"
