"""Regularization parameter selection for TV tomography via unbiased Bregman-risk estimators."""

__version__ = "0.1.0"
