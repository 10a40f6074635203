"""Trace-driven ABR streaming simulator with V-trace actor-learner training."""

__version__ = "0.1.0"
