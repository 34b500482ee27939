"""Lane merging with a soft actor-critic policy and least-squares post-optimization."""

__version__ = "0.1.0"
