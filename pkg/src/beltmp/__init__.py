"""Task and motion planning for 2D navigation in belief space."""

__version__ = "0.1.0"
