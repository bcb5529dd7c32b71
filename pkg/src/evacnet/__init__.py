"""Evacuation-traffic forecasting with dynamic multi-graph fusion and an
RL feature-masking agent."""

__version__ = "0.1.0"
