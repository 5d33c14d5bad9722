"""Model-based anomaly detection for underwater gliders."""

__version__ = "0.1.0"
