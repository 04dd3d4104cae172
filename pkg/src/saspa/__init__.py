"""Structure- and subject-preserving generative augmentation for fine-grained classification."""

__version__ = "0.1.0"
