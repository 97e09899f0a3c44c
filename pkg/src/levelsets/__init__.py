"""Level-set toolkit for small MLPs.

Samples points on network level sets, makes the samples differentiable in
the network parameters, and uses them in classification, robustness and
reconstruction losses. Also compiles watertight piecewise-linear
hypersurfaces into exact ReLU networks.
"""

from .mlp import Mlp, make_mlp, make_fc1, make_fc2, save_checkpoint, load_checkpoint

__all__ = [
    "Mlp",
    "make_mlp",
    "make_fc1",
    "make_fc2",
    "save_checkpoint",
    "load_checkpoint",
]
