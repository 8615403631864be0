"""Benchmark construction, debiasing losses, and robustness evaluation for AVQA."""

__version__ = "0.1.0"
