"""Structure-aware feature generation for zero-shot learning."""

__version__ = "0.1.0"
