"""Split-learning lab: feature-space hijacking against a DP-trained client."""

__version__ = "0.1.0"
