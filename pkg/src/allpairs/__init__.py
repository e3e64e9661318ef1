"""All-Pairs benchmark generator and spatial type-histogram network toolkit."""

__version__ = "0.1.0"
