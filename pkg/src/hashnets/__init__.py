"""Sketching-based compression and HashedNets recovery, with verification tools."""

__version__ = "0.1.0"
