"""Likelihood-free MCMC: kernel, synthetic-likelihood and GP-surrogate ABC samplers."""

__version__ = "0.1.0"
