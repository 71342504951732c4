"""Perfect simulation of finitary codings and empirical concentration checks."""

__version__ = "0.1.0"
