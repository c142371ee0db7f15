"""Day-to-day route-swapping dynamics on path-based traffic networks."""

__version__ = "0.1.0"
