"""Delay-constrained, power-minimizing uplink scheduling with per-user online learners."""

__version__ = "0.1.0"
