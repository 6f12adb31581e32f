"""End-to-end gradient verification on a small built-in instance.

The instance has 5 entities and 3 facts.  The loss runs the full pipeline
(lift, hyper-star message passing, tangent map, decoder, cross-entropy over
sampled negatives) so every tape primitive the trainer uses is exercised.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .autodiff import ParamStore, Tape, finite_diff_check
from .data import KnowledgeHypergraph, KnowledgeTuple
from .decoders import DECODERS, hsimple_shift
from .encoder import GraphIndex
from .errors import ConfigError
from .training import HStarModel, TrainConfig, link_prediction_loss

TOY_ENTITIES = 5


def toy_graph(max_arity: int = 4) -> KnowledgeHypergraph:
    """Three facts over five entities; the longest has arity ``max_arity``."""
    if not 2 <= max_arity <= TOY_ENTITIES:
        raise ConfigError(f"max arity must lie in 2..{TOY_ENTITIES}, got {max_arity}")
    tuples = [
        KnowledgeTuple(0, (0, 1)),
        KnowledgeTuple(1, tuple(range(1, 1 + max_arity)) if max_arity < TOY_ENTITIES else tuple(range(5))),
        KnowledgeTuple(0, (4, 2, 0)[: min(3, max_arity)]),
    ]
    return KnowledgeHypergraph(TOY_ENTITIES, 2, tuples)


def pipeline_error(decoder: str, dim: int = 4, max_arity: int = 4, eps: float = 1e-5, layers: int = 2,
                   neg_ratio: int = 2, seed: int = 0) -> float:
    """Largest relative analytic-vs-numeric gradient error for one decoder."""
    if decoder not in DECODERS:
        raise ConfigError(f"unknown decoder {decoder!r}")
    if decoder == "hsimple":
        hsimple_shift(1, dim, max_arity)
    hg = toy_graph(max_arity)
    config = TrainConfig.for_task("lp", decoder=decoder, dim=dim, layers=layers, dropout=0.0,
                                  neg_ratio=neg_ratio, seed=seed)
    model = HStarModel(config, hg.entity_count, hg.relation_count, hg.max_arity)
    store = ParamStore()
    rng = np.random.default_rng(seed)
    model.init_params(store, rng)
    # generic values everywhere so no parameter sits at a symmetric or zero point
    for name in store.names():
        if not name.endswith("log_lam") and name != "dec.normal":
            store[name][...] = rng.normal(scale=0.5, size=store[name].shape)
    gi = GraphIndex(hg)

    def loss(tape: Tape, s: ParamStore):
        # a fresh generator per evaluation keeps the sampled negatives fixed
        return link_prediction_loss(model, tape, s, gi, hg.tuples, neg_ratio, np.random.default_rng(seed + 1))

    return finite_diff_check(loss, store, eps)


def check_all(dim: int = 4, max_arity: int = 4, eps: float = 1e-5, decoder: Optional[str] = None,
              seed: int = 0) -> Dict[str, float]:
    kinds = DECODERS if decoder is None else (decoder,)
    return {k: pipeline_error(k, dim, max_arity, eps, seed=seed) for k in kinds}
