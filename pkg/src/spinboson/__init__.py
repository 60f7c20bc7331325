"""Spin-boson simulation and fitting toolkit with structured (Lorentzian) baths."""

__version__ = "0.1.0"
