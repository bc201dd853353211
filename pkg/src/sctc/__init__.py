"""Exact BEC density-evolution thresholds for spatially coupled turbo-like codes."""

__version__ = "0.1.0"
