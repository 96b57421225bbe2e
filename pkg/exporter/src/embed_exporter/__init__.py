"""Embedding exporter: tiles slide images into 512x512 patches, runs a frozen
CNN backbone, and writes per-slide MILF embedding files consumable by the
milcount training pipeline."""

__version__ = "0.1.0"
