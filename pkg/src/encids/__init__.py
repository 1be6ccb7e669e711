"""Intrusion analysis for encrypted IP traffic from header fields alone."""

__version__ = "0.1.0"
