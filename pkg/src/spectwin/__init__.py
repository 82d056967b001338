"""Desk-scale digital twin of a CBRS radar/cellular spectrum-sharing experiment."""

__version__ = "0.1.0"
