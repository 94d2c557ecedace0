"""Design-based survey estimation with cross-fitted regression estimators."""

__version__ = "0.1.0"
