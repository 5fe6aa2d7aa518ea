"""Dirichlet dynamic edge partition model for temporal relational data."""
__version__ = "0.1.0"
