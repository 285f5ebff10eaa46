"""Soft conservative KL-control for closed-loop driving RL."""

__version__ = "0.1.0"
