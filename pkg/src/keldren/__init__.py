"""Nonequilibrium diagram-technique renormalization toolkit."""

__version__ = "0.1.0"

from . import occupancy, trees  # noqa: F401
