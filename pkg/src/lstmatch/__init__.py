"""Trainable tracking-by-association for per-frame text detections."""

__version__ = "0.1.0"
