"""Parametric SCED toolkit.

Solves security-constrained economic dispatch as a parametric linear
program, enumerates the polyhedral load-space regions that share one
binding-constraint pattern (and hence one LMP vector), generates
Monte-Carlo market datasets, and identifies regions from data with
one-vs-one linear SVMs plus calibrated multi-class posteriors.

Submodules: ``grid``, ``sced``, ``mpr``, ``learn``, ``eval``,
``datagen``, ``simplex``, ``cli``.
"""

__version__ = "0.1.0"
