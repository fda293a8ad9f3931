"""Head-movement forecasting for 360-degree video and tile-prefetch simulation."""

__version__ = "0.1.0"
