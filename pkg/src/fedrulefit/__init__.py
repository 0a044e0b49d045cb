"""Federated RuleFit for binary outcomes."""

__version__ = "0.1.0"
