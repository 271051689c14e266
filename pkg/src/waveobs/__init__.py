"""Observation regions, Carleman frames and discrete observability constants."""

__version__ = "0.1.0"
