"""Multi-relational memory network recommender."""

__version__ = "0.1.0"
