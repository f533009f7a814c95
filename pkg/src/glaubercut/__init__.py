"""Glauber dynamics on finite spin systems: couplings, update supports and
exact mixing computations."""

__version__ = "0.1.0"
