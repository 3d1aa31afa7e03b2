"""Integrated ad/organic page auctions: truthful mechanisms, exact flow oracles and simulations."""

__version__ = "0.1.0"
