"""Numerical verification laboratory for adapted metrics, cone fields and
admissible leaves of suspension Anosov flows."""

__version__ = "0.1.0"
