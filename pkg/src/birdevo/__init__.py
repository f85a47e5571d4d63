"""Evolved two-input (spectrogram + recording conditions) song classifiers."""

__version__ = "0.1.0"
