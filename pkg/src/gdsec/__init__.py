"""Communication-efficient distributed gradient descent: a simulator for
sparsified gradient-difference updates with error correction and state
variables, the standard compressed-communication baselines, exact
transmitted-bit accounting, and a convergence-theory checker."""

__version__ = "0.1.0"

from gdsec.core import BitLedger, HyperParams, SparseDelta, apply_sparse, densify
from gdsec.kernels import backend_name

__all__ = [
    "BitLedger",
    "HyperParams",
    "SparseDelta",
    "apply_sparse",
    "densify",
    "backend_name",
    "__version__",
]
