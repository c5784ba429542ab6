"""Auxiliary-variable MCMC for hidden Markov jump processes and CTBNs."""
__version__ = "0.1.0"
