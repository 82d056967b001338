"""Trainer for the spectwin radar detector."""

__version__ = "0.1.0"
