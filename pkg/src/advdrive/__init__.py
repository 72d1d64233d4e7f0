"""Adversarial self-driving toolkit."""

__version__ = "0.1.0"
