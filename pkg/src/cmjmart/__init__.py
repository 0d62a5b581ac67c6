"""Numerical laboratory for complex matrix martingales of supercritical
multi-type general branching processes."""

__version__ = "0.1.0"
