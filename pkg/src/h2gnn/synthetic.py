"""Synthetic datasets with known structure, used by the acceptance suite and demos."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from .data import KnowledgeHypergraph, KnowledgeTuple, LabeledHypergraph, SplitSpec, make_splits


def tree_parents(entity_count: int, branching: int) -> np.ndarray:
    """Parent array of a complete ``branching``-ary tree filled breadth first (root parent -1)."""
    parent = np.full(entity_count, -1, dtype=np.int64)
    for x in range(1, entity_count):
        parent[x] = (x - 1) // branching
    return parent


def ancestors(parent: np.ndarray, x: int) -> List[int]:
    out = []
    while parent[x] >= 0:
        x = int(parent[x])
        out.append(x)
    return out


def compositional_kb(entity_count: int = 100, branching: int = 3) -> KnowledgeHypergraph:
    """Five relations read off a rooted tree of depth >= 3.

    * ``parent(x, p)``
    * ``lineage(x, p, g)``            x -> parent -> grandparent
    * ``sibling(x, y, p)``            x != y share parent p
    * ``skip(a, c, e)``               holds iff lineage(a, b, c) and lineage(c, d, e)
    * ``chain(x, p, g, h)``           x's first three ancestors

    ``skip`` is the composition of ``lineage`` with itself, so its facts are
    implied by the others.
    """
    parent = tree_parents(entity_count, branching)
    children: dict = {}
    for x in range(1, entity_count):
        children.setdefault(int(parent[x]), []).append(x)
    facts: List[KnowledgeTuple] = []
    for x in range(1, entity_count):
        anc = ancestors(parent, x)
        facts.append(KnowledgeTuple(0, (x, anc[0])))
        if len(anc) >= 2:
            facts.append(KnowledgeTuple(1, (x, anc[0], anc[1])))
        if len(anc) >= 4:
            facts.append(KnowledgeTuple(3, (x, anc[1], anc[3])))
        if len(anc) >= 3:
            facts.append(KnowledgeTuple(4, (x, anc[0], anc[1], anc[2])))
    for p, kids in sorted(children.items()):
        for x in kids:
            for y in kids:
                if x != y:
                    facts.append(KnowledgeTuple(2, (x, y, p)))
    names = [f"e{i}" for i in range(entity_count)]
    rels = ["parent", "lineage", "sibling", "skip", "chain"]
    return KnowledgeHypergraph(entity_count, 5, facts, names, rels)


def compositional_dataset(seed: int = 0, entity_count: int = 100, branching: int = 3,
                          ratios=(0.8, 0.1, 0.1)) -> Tuple[KnowledgeHypergraph, SplitSpec]:
    hg = compositional_kb(entity_count, branching)
    split = make_splits(len(hg.tuples), ratios, np.random.default_rng(seed))
    return hg, split


def clustered_hypergraph(seed: int = 0, nodes: int = 60, classes: int = 2, edges_per_class: int = 20,
                         edge_size: Tuple[int, int] = (2, 5), feature_dim: int = 16,
                         signal: float = 1.0) -> LabeledHypergraph:
    """Hypergraph whose hyperedges never cross class boundaries.

    Node features are Gaussian noise plus a class-dependent mean of size
    ``signal`` on a class-specific block of coordinates.  Every node belongs
    to at least one hyperedge.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(nodes) % classes
    rng.shuffle(labels)
    members = [np.flatnonzero(labels == c) for c in range(classes)]
    tuples = []
    for c in range(classes):
        pool = rng.permutation(members[c])
        # cover every node first, then add random label-pure edges
        lo, hi = edge_size
        i = 0
        while i < len(pool):
            size = int(rng.integers(lo, hi + 1))
            chunk = pool[i : i + size]
            if len(chunk) < lo and tuples:
                chunk = np.concatenate([chunk, rng.choice(members[c], size=lo - len(chunk), replace=False)])
            tuples.append(KnowledgeTuple(0, tuple(int(v) for v in np.unique(chunk))))
            i += size
        for _ in range(edges_per_class):
            size = int(rng.integers(lo, hi + 1))
            chunk = rng.choice(members[c], size=size, replace=False)
            tuples.append(KnowledgeTuple(0, tuple(int(v) for v in chunk)))
    features = rng.normal(size=(nodes, feature_dim))
    block = feature_dim // classes
    for c in range(classes):
        features[labels == c, c * block : (c + 1) * block] += signal
    graph = KnowledgeHypergraph(nodes, 1, tuples, [str(i) for i in range(nodes)], ["edge"], min_arity=1)
    return LabeledHypergraph(graph, features, labels.astype(np.int64))
