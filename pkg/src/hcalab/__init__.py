"""Exact and sampled analysis of MC, HCA and delta-HCA advantage estimators on tabular MDPs."""

__version__ = "0.1.0"
