"""Commutator Cesaro means and polynomial decay of matrix coefficients on finite truncations."""

__version__ = "0.1.0"
