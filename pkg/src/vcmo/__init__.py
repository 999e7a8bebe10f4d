"""Frequency-domain simulator for multi-overtone voltage-controlled MEMS oscillators."""

__version__ = "0.1.0"
