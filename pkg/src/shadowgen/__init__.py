"""Desk-scale two-stage shadow generation: synthetic data, network, losses, metrics and harness."""

__version__ = "0.1.0"
