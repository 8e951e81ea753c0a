"""Prediction-instability audits for retrained clinical risk models."""

__version__ = "0.1.0"
