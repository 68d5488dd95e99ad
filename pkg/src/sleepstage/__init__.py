"""Hierarchical sleep staging from EEG/EOG."""

__version__ = "0.1.0"
