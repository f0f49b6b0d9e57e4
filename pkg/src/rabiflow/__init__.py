"""Numerical Rabinowitz-Floer trajectories and the estimates that keep them compact."""

__version__ = "0.1.0"
