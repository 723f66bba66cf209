"""Numerical laboratory for regularity of Markov-Feller semigroups."""

__version__ = "0.1.0"
