"""Hybrid HMM/LSTM speech decoding with frame stacking and retaining."""

__version__ = "0.1.0"
