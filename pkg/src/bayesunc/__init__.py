"""Aleatoric and epistemic uncertainty for small neural networks, from scratch on numpy."""

__version__ = "0.1.0"
