"""Feature-conditional GAN toolkit.

A generator/discriminator pair conditioned per sample on embeddings from a
frozen metric-learning backbone, plus the surrounding machinery: dataset
handling, metric training, sampling, interpolation, evaluation and few-shot
data augmentation.
"""

__version__ = "0.1.0"
