"""Bayesian mixed-type clustering, model selection and cluster-wise synthetic data."""

__version__ = "0.1.0"
