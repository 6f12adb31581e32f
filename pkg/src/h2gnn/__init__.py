"""Hyperbolic hypergraph neural network for knowledge hypergraphs.

Lorentz-model geometry, hyper-star message passing with position-aware
features, tuple decoders and training/evaluation drivers.
"""

from .lorentz import (
    LorentzLinearParams,
    centroid,
    exp_map,
    lift_from_euclidean,
    log_map,
    lorentz_linear,
    lorentz_norm,
    minkowski_inner,
    squared_lorentz_distance,
    to_tangent,
)

__version__ = "0.1.0"
