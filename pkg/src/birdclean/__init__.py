"""Label-noise cleaning for single-species bird sound datasets."""

__version__ = "0.1.0"
