"""Adaptive generalized approximate message passing with state evolution."""

__version__ = "0.1.0"
