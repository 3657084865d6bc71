"""Fairness-without-demographics toolkit: group gap metrics, shortcut-bias
algebra, soft nearest neighbor feature losses and an attention block, with a
synthetic lab that trains a small CNN on shortcut-biased lesion images."""

__version__ = "0.1.0"
