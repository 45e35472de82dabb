"""Behavior cloning with stability penalties on linearized error dynamics."""

__version__ = "0.1.0"
