"""Risk-averse motion planning and tracking for a noisy unicycle."""

__version__ = "0.1.0"
