"""Preprocessing-driven deepfake detection: grayscale histogram sequences
for a recurrent classifier and eye-blink statistics for a KNN classifier."""

__version__ = "0.1.0"
