"""Terahertz multipath channel modeling and generation toolkit."""

__version__ = "0.1.0"
