"""GAN training with a jigsaw-deshuffling discriminator task."""

__version__ = "0.1.0"
