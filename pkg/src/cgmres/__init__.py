"""Continuation/GMRES nonlinear model predictive control."""

__version__ = "0.1.0"
