"""fairlens: fairness auditing for binary classifiers on tabular data."""

__version__ = "0.1.0"
