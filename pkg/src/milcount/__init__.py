"""Bag-level droplet count regression: attention-MIL head vs aggregated-count
MLP baseline, with an annotation/augmentation/bagging pipeline and a five-fold
cross-validation harness."""

__version__ = "0.1.0"
