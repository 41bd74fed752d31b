"""Pseudo-ensemble training toolkit.

Noise processes spawn child models from a parent model; agreement
penalties keep the children's behavior consistent.  Includes a layered
feedforward network trained with masking/Gaussian noise, agreement
regularization for supervised and semi-supervised objectives, and a
compact recursive tensor network trained with subspace sampling and
weight fuzzing.
"""

__version__ = "0.1.0"

from .core import RngStream, entropy, kl_divergence, log_partition, softmax

__all__ = [
    "RngStream",
    "entropy",
    "kl_divergence",
    "log_partition",
    "softmax",
    "__version__",
]
