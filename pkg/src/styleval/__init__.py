"""Calibrated effectiveness/coherence evaluation workbench for style transfer."""

__version__ = "0.1.0"
