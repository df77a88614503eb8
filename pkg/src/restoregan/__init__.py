"""Restoring a classifier's training distribution with a conditional GAN."""

__version__ = "0.1.0"
