"""Survival-supervised multi-omics integration with autoencoders."""

__version__ = "0.1.0"
