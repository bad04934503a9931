"""fuselab: trainable text+image fusion classifiers over precomputed embeddings.

Three fusion heads (basic concatenation, self-attention over the two modality
tokens, dual attention with cross-modal adjustment) share frozen upstream
encoders, explicit hand-derived gradients, and a finite-difference checker
that keeps every backward pass honest.
"""

from . import backend

__version__ = "0.1.0"

__all__ = ["backend", "__version__"]
