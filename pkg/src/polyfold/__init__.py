"""Multi-state protein inverse folding toolkit."""

__version__ = "0.1.0"
