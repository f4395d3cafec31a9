"""Supervised variational autoencoder for robot failure identification,
with baselines, a crop-row scan simulator and an evaluation suite."""

__version__ = "0.1.0"
