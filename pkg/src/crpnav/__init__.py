"""Trajectory design and navigation assessment for CubeSat proximity
operations around a binary asteroid."""

__version__ = "0.1.0"
