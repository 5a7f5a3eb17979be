"""Numerical measure of a complex square matrix."""
