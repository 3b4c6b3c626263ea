"""Client-centric staleness measurement for key-value store executions."""

__version__ = "0.1.0"
