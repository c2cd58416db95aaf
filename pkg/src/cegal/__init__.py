"""Counterexample-guided safety-aware apprenticeship learning for Markov games."""

__version__ = "0.1.0"
