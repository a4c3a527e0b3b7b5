"""Pointlike field spaces from the short-distance scaling of local observables."""

__version__ = "0.1.0"
