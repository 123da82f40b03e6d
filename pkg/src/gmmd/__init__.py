"""Cycle-consistent maps between metric measure spaces via generalized MMD."""

__version__ = "0.1.0"
