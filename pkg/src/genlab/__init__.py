"""Path-space generalization analysis for small ReLU / max-pool networks.

Modules: ``linalg`` (Jacobi eigen/SVD), ``netdag`` (DAG networks and their
path decomposition), ``distribution`` (finite distributions, datasets, IDX),
``train`` (momentum SGD, DARC1, two-phase training), ``bounds`` (gap
decomposition and concentration bounds), ``linmem`` (linear memorization)
and ``cli`` (the ``genlab`` experiments).
"""

__version__ = "0.1.0"
