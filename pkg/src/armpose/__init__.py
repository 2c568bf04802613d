"""Arm pose estimation from a single wrist-worn device."""

__version__ = "0.1.0"
