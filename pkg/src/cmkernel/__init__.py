"""Data-driven center manifold surrogates from greedy kernel regression."""
__version__ = "0.1.0"
