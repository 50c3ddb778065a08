"""Penalized Gaussian-mixture sieve estimation, clustering and the numerical
machinery behind its approximation and lower-bound guarantees."""

__version__ = "0.1.0"
