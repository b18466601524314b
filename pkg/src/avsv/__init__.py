"""Audio-visual speaker verification: unimodal, mid-fusion and multi-view models."""

__version__ = "0.1.0"
