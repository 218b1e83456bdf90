"""Early-layer feature-map filtering for condition-robust visual place recognition."""

__version__ = "0.1.0"
