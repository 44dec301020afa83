"""Ride-hailing market equilibrium under wage floors and congestion charges."""

__version__ = "0.1.0"
