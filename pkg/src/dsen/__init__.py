"""Dyadic-EEG synchrony features and relationship classification."""

__version__ = "0.1.0"
