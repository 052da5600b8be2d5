"""Two-stage semantic matching: pooled-cosine retrieval, token-map verification."""

__version__ = "0.1.0"
