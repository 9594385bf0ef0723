"""Conformal synthesis of labelled data from high-confidence feature-space regions."""

__version__ = "0.1.0"
