"""Certified Wasserstein bounds for discrete approximations of pushforward measures."""

__version__ = "0.1.0"
