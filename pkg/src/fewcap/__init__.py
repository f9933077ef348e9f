"""Few-supervised video captioning with lexically constrained pseudo labels."""

__version__ = "0.1.0"
