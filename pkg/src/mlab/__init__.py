"""Simulation and verification toolkit for Markov selections of ill-posed
stochastic evolution equations.

Modules: ``pathcore`` (grids, paths, streams, martingale tests), ``peano``,
``girsanov`` and ``stroockyor`` (the one-dimensional examples), ``nse``
(cut-off Galerkin Navier-Stokes), ``semigroup`` (semigroup, resolvent and
generator estimators) and ``cli``.
"""

__version__ = "0.1.0"
