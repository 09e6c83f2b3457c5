"""Adaptive nonlinear latent editing on a synthetic latent world."""
__version__ = "0.1.0"
