"""Layered noise filtering and UAV tracking for radar point-cloud streams."""

__version__ = "0.1.0"
