"""Radial averaging operators on the unit disc and their weighted norm conditions."""

__version__ = "0.1.0"
