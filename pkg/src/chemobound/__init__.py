"""Numerical tools for blow-up time lower bounds in attraction-repulsion chemotaxis."""

__version__ = "0.1.0"
