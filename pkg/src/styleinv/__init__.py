"""styleinv: a desk-scale GAN inversion laboratory.

A frozen style-layered generator, a gradient iterator that optimizes
latent codes against image and feature losses, and an embedding network
trained collaboratively against the iterator's best results.
"""

__version__ = "0.1.0"
