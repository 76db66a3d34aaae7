"""Dyna-style model-based RL with maximum-entropy prioritized single-step rollouts."""

__version__ = "0.1.0"
