"""Inference for p-tensor Ising models.

Submodules:

* ``cw_exact``: exact Curie-Weiss computations, classification of (beta, h), ML estimation.
* ``tensor``: general hypergraph models, Gibbs sampling, pseudolikelihood estimation.
* ``zoo``: random model generators and estimability thresholds.
* ``covariate``: L1-penalized pseudolikelihood with node covariates.
* ``harness``: replicated Monte-Carlo experiments.
"""

__version__ = "0.1.0"
