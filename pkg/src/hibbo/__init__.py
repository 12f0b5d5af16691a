"""Latent-space Bayesian optimisation with HiPPO space consistency."""

__version__ = "0.1.0"
