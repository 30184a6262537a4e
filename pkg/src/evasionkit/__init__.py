"""Toolkit for modeling environment-aware evasion and its deception countermeasure."""

__version__ = "0.1.0"
