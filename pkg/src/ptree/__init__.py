"""Panel trees: characteristic-sorted basis portfolios grown on a mean-variance criterion."""

__version__ = "0.1.0"
