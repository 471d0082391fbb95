"""Predictive driving: simulated intention-labelled traffic and recurrent intention classifiers."""

__version__ = "0.1.0"
