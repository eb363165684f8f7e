"""sake - system-anchored context-window selection for autoregressive simulators."""

__version__ = "0.1.0"
