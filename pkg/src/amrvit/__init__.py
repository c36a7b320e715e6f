"""Semi-supervised automatic modulation recognition with a ViT encoder."""

__version__ = "0.1.0"
