"""noiselab: noise-latent control experiments on a desk-scale spectrogram diffusion model."""

__version__ = "0.1.0"
