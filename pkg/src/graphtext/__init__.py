"""Graph-to-text generation with graph-guided self-attention."""

__version__ = "0.1.0"
