"""Multimodal valence/arousal estimation from precomputed per-frame features."""

__version__ = "0.1.0"
