"""Reduced-basis solver for parametrized families of discrete optimal transport problems."""

__version__ = "0.1.0"
