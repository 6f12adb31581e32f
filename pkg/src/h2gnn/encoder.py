"""Hyper-star message passing encoder.

Each layer runs two centroid stages over the star expansion of the graph:

1. every fact point is the centroid of its member entity points;
2. every entity point becomes the centroid of its own (transformed) point
   and, for each fact it belongs to, the composition
   ``centroid(W_h h_e, W_r r_e, W_p h_p)`` where ``h_p`` is the
   position row for (relation, the entity's position in that fact).

Entity, relation and position tables are stored as Euclidean rows and lifted
onto the hyperboloid inside the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import ParamStore, Tape, Var
from .data import KnowledgeHypergraph, hyper_star_expand
from .lorentz import DEFAULT_K


@dataclass
class EncoderConfig:
    layers: int = 1
    dim: int = 32
    dropout: float = 0.0
    k: float = DEFAULT_K
    mode: str = "link_prediction"  # or "classification"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.mode not in ("link_prediction", "classification"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.k < 0:
            raise ValueError("curvature must be negative")


class GraphIndex:
    """Flat index arrays derived from a hypergraph's star expansion.

    ``max_arity`` may be set larger than the graph's own so that training and
    evaluation views of one dataset share the position table layout.
    """

    def __init__(self, hg: KnowledgeHypergraph, max_arity: Optional[int] = None):
        exp = hyper_star_expand(hg)
        self.max_arity = max_arity or hg.max_arity
        self.entity_count = hg.entity_count
        self.relation_count = hg.relation_count
        self.tuple_count = len(hg.tuples)
        rels = np.array([t.relation for t in hg.tuples], dtype=np.int64)
        self.member_entity = exp.edges[:, 0]
        self.member_tuple = exp.edges[:, 1]
        self.member_relation = rels[self.member_tuple] if len(rels) else np.zeros(0, dtype=np.int64)
        pos0 = exp.edges[:, 2] - self.member_relation * exp.max_arity if len(exp.edges) else exp.edges[:, 2]
        self.member_position = self.member_relation * self.max_arity + pos0
        # self rows first, then one composed message per membership
        self.update_ids = np.concatenate([np.arange(self.entity_count), self.member_entity])


def init_encoder(store: ParamStore, config: EncoderConfig, entity_count: int, relation_count: int,
                 max_arity: int, rng: np.random.Generator, feature_dim: Optional[int] = None,
                 init_scale: float = 0.1) -> None:
    d = config.dim
    if config.mode == "classification":
        if feature_dim is None:
            raise ValueError("classification mode needs feature_dim")
        layers.init_linear(store, "enc.input", feature_dim, d, rng)
    else:
        store.add("entity", rng.normal(scale=init_scale, size=(entity_count, d)))
    store.add("relation", rng.normal(scale=init_scale, size=(relation_count, d)))
    store.add("position", rng.normal(scale=init_scale, size=(relation_count * max_arity, d)))
    for layer in range(config.layers):
        for part in ("Wh", "Wr", "Wp"):
            layers.init_linear(store, f"enc.{layer}.{part}", d, d, rng)


def layer_activation(layer: int) -> str:
    return "identity" if layer == 0 else "relu"


def tangent_dropout(x: Var, p: float, rng: np.random.Generator, k: float = DEFAULT_K) -> Var:
    """Inverted dropout on the origin tangent coordinates, then re-lift."""
    v = layers.to_tangent(x, k)
    keep = (rng.random(v.shape) >= p).astype(np.float64) / (1.0 - p)
    return layers.lift(v * keep, k)


def embed_inputs(tape: Tape, store: ParamStore, config: EncoderConfig, features: Optional[np.ndarray] = None):
    """Entity, relation and position points on the hyperboloid."""
    k = config.k
    if config.mode == "classification":
        x = layers.lorentz_linear(tape, store, "enc.input", layers.lift(tape.const(features), k), k=k)
    else:
        x = layers.lift(tape.param(store, "entity"), k)
    rel = layers.lift(tape.param(store, "relation"), k)
    pos = layers.lift(tape.param(store, "position"), k)
    return x, rel, pos


def hstar_layer(tape: Tape, store: ParamStore, gi: GraphIndex, layer: int, x: Var, rel: Var, pos: Var,
                k: float = DEFAULT_K):
    """One round of fact aggregation followed by entity update; returns (entities, facts)."""
    act = layer_activation(layer)
    prefix = f"enc.{layer}"
    self_pts = layers.lorentz_linear(tape, store, f"{prefix}.Wh", x, act, k)
    if gi.tuple_count == 0:
        return self_pts, None
    edge = layers.centroid_segments(x[gi.member_entity], gi.member_tuple, gi.tuple_count, k)
    he = layers.lorentz_linear(tape, store, f"{prefix}.Wh", edge, act, k)
    re = layers.lorentz_linear(tape, store, f"{prefix}.Wr", rel, act, k)
    hp = layers.lorentz_linear(tape, store, f"{prefix}.Wp", pos, act, k)
    comp = layers.centroid_stack([he[gi.member_tuple], re[gi.member_relation], hp[gi.member_position]], k)
    rows = ad.concat([self_pts, comp], axis=0)
    out = layers.centroid_segments(rows, gi.update_ids, gi.entity_count, k)
    return out, edge


def encode(tape: Tape, store: ParamStore, gi: GraphIndex, config: EncoderConfig,
           rng: Optional[np.random.Generator] = None, train: bool = False,
           features: Optional[np.ndarray] = None, return_edges: bool = False):
    """Entity points after ``config.layers`` rounds of hyper-star message passing.

    Dropout only acts when ``train`` is true and ``config.dropout > 0``;
    evaluation mode is deterministic.
    """
    x, rel, pos = embed_inputs(tape, store, config, features)
    edges: List[Optional[Var]] = []
    for layer in range(config.layers):
        if train and config.dropout > 0:
            x = tangent_dropout(x, config.dropout, rng, config.k)
        x, edge = hstar_layer(tape, store, gi, layer, x, rel, pos, config.k)
        edges.append(edge)
    if return_edges:
        return x, edges
    return x
