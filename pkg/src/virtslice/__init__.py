"""Rate-coverage analysis and BS leasing/slicing for virtualized cellular networks."""

__version__ = "0.1.0"
