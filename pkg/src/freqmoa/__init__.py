"""Frequency-split mixture-of-adapters tuning for a frozen tiny ViT,
with supervised and self-training loops on a synthetic two-domain
segmentation benchmark."""

__version__ = "0.1.0"
