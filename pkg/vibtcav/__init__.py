"""Vibration concepts and TCAV for bearing fault classifiers."""

__version__ = "v0.3.0"
