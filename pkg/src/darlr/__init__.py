"""Dual-agent model-based offline RL recommendation laboratory."""

__version__ = "0.1.0"
