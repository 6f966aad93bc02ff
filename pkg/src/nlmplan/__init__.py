"""Learned heuristics for STRIPS planning with neural logic machines."""

__version__ = "0.1.0"
