"""Residual-augmented denoising diffusion for refining a biased model output."""

__version__ = "0.1.0"
