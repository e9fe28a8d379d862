"""Modular DNN detection of generalized spatial modulation signals."""

__version__ = "0.1.0"
