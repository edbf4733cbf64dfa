"""Entropy-regularized mean-field games of optimal stopping via singular controls."""
