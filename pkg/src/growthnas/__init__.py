"""Growth-based evolutionary architecture search with a pruned weight-sharing supernet."""

__version__ = "0.1.0"
