"""Causal discovery, effect estimation and explainable mode-choice modelling on coded survey data."""

__version__ = "0.1.0"
