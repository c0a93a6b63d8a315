"""Residual vector quantization as an inference-time defense for a toy CTC recognizer."""

__version__ = "0.1.0"
