"""Point-in-time venture backtesting: labels, features, classifier, walk-forward fund simulation."""

__version__ = "0.1.0"
