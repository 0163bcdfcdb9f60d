"""Structured two-stream attention for video question answering."""

__version__ = "0.1.0"
