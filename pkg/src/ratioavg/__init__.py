"""Monte Carlo kernels with averaged acceptance-ratio estimators.

The package provides:

- generic Metropolis kernels whose acceptance ratio is an average of N
  independently computable unbiased estimators (``core``),
- closed-form analysis of a two-state model (``toy``),
- annealed exchange kernels for doubly intractable posteriors with an
  Ising benchmark (``exchange``, ``ising``),
- annealed kernels for latent-variable and trans-dimensional targets,
  with a change-point benchmark (``latent``, ``transdim``),
- conditional SMC machinery for state-space models (``smc``),
- exact finite-space verification oracles and chain diagnostics
  (``diagnostics``, ``oracle``),
- a configuration-driven experiment harness (``cli``).
"""

__version__ = "0.1.0"
