"""Jigsaw-puzzle self-supervised pretraining with progressive multi-granularity fine-tuning."""

__version__ = "0.1.0"
