"""Desk-scale line recognition toolkit: CRNN/CTC training, transfer learning,
augmentation and corrupted-label purging."""

__version__ = "0.1.0"
