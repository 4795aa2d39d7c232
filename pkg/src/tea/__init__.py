"""TEA: transformer code attention with program-structure attention tensors."""

__version__ = "0.1.0"
