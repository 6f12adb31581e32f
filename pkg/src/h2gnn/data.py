"""Knowledge hypergraph containers, file loaders, splits and star expansion."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConsistencyError, EmptyGraphError, ParseError

Incidence = List[List[Tuple[int, int]]]


@dataclass(frozen=True)
class KnowledgeTuple:
    """One fact ``(relation, e_1, ..., e_m)``; positions are 1-based elsewhere."""

    relation: int
    entities: Tuple[int, ...]

    @property
    def arity(self) -> int:
        return len(self.entities)


def build_incidence(tuples: Sequence[KnowledgeTuple], entity_count: int) -> Incidence:
    """For every entity, the ``(tuple index, position)`` pairs it occupies, position 1-based."""
    inc: Incidence = [[] for _ in range(entity_count)]
    for t_idx, t in enumerate(tuples):
        for pos, ent in enumerate(t.entities, start=1):
            inc[ent].append((t_idx, pos))
    return inc


@dataclass
class KnowledgeHypergraph:
    entity_count: int
    relation_count: int
    tuples: List[KnowledgeTuple]
    entity_names: List[str] = field(default_factory=list)
    relation_names: List[str] = field(default_factory=list)
    min_arity: int = 2

    def __post_init__(self):
        for t in self.tuples:
            if t.arity < self.min_arity:
                raise ValueError(f"tuple {t} has arity {t.arity} < {self.min_arity}")
            if not 0 <= t.relation < self.relation_count:
                raise ValueError(f"relation id {t.relation} out of range")
            for e in t.entities:
                if not 0 <= e < self.entity_count:
                    raise ValueError(f"entity id {e} out of range")
        self.incidence = build_incidence(self.tuples, self.entity_count)

    @property
    def max_arity(self) -> int:
        return max((t.arity for t in self.tuples), default=0)

    def arity_histogram(self) -> Dict[int, int]:
        return dict(sorted(Counter(t.arity for t in self.tuples).items()))

    def subgraph(self, tuple_indices: Iterable[int]) -> "KnowledgeHypergraph":
        """Same vocabulary, restricted fact set."""
        return KnowledgeHypergraph(
            self.entity_count,
            self.relation_count,
            [self.tuples[i] for i in tuple_indices],
            self.entity_names,
            self.relation_names,
            self.min_arity,
        )

    def tuple_set(self) -> set:
        return {(t.relation, t.entities) for t in self.tuples}


@dataclass
class LabeledHypergraph:
    """Single-relation hypergraph with node features and class labels."""

    graph: KnowledgeHypergraph
    features: np.ndarray
    labels: np.ndarray  # -1 where a node is unlabeled

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if np.any(self.labels >= 0) else 0

    @property
    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)


# ---------------------------------------------------------------------------
# parsing


class Vocabulary:
    """Interns string tokens to dense ids in first-seen order."""

    def __init__(self):
        self.index: Dict[str, int] = {}
        self.names: List[str] = []

    def __call__(self, token: str) -> int:
        idx = self.index.get(token)
        if idx is None:
            idx = len(self.names)
            self.index[token] = idx
            self.names.append(token)
        return idx

    def __len__(self):
        return len(self.names)


def _read_tuple_lines(path, entities: Vocabulary, relations: Vocabulary) -> List[KnowledgeTuple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) < 3:
                raise ParseError(f"expected a relation and at least 2 entities, got {len(tokens)} token(s)", path, lineno)
            rel = relations(tokens[0])
            out.append(KnowledgeTuple(rel, tuple(entities(tok) for tok in tokens[1:])))
    return out


def parse_tuple_file(path) -> KnowledgeHypergraph:
    """Load ``<relation> <entity1> ... <entityM>`` lines into a hypergraph."""
    entities, relations = Vocabulary(), Vocabulary()
    tuples = _read_tuple_lines(path, entities, relations)
    if not tuples:
        raise EmptyGraphError("file contains no facts", path)
    return KnowledgeHypergraph(len(entities), len(relations), tuples, entities.names, relations.names)


def parse_tuple_files(paths: Sequence) -> Tuple[KnowledgeHypergraph, List[np.ndarray]]:
    """Parse several files into one graph sharing a vocabulary.

    Returns the merged graph and, per file, the indices of its tuples.
    Empty files are allowed as long as the union is nonempty.
    """
    entities, relations = Vocabulary(), Vocabulary()
    tuples: List[KnowledgeTuple] = []
    parts = []
    for p in paths:
        chunk = _read_tuple_lines(p, entities, relations)
        parts.append(np.arange(len(tuples), len(tuples) + len(chunk)))
        tuples.extend(chunk)
    if not tuples:
        raise EmptyGraphError("files contain no facts", paths[0] if paths else None)
    hg = KnowledgeHypergraph(len(entities), len(relations), tuples, entities.names, relations.names)
    return hg, parts


def parse_labeled_hypergraph(edge_path, feature_path, label_path) -> LabeledHypergraph:
    """Load a co-citation / co-authorship style dataset.

    Hyperedges list integer node indices; every hyperedge gets relation 0 and
    positions follow the order within its line.  Singleton hyperedges are kept.
    """
    try:
        features = np.loadtxt(feature_path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ParseError(str(exc), feature_path) from None
    n = features.shape[0]

    tuples = []
    with open(edge_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            try:
                members = tuple(int(t) for t in tokens)
            except ValueError:
                raise ParseError("hyperedge members must be integers", edge_path, lineno) from None
            bad = [m for m in members if not 0 <= m < n]
            if bad:
                raise ConsistencyError(f"{edge_path}:{lineno}: node {bad[0]} outside feature matrix of {n} rows")
            tuples.append(KnowledgeTuple(0, members))
    if not tuples:
        raise EmptyGraphError("no hyperedges", edge_path)

    labels = np.full(n, -1, dtype=np.int64)
    with open(label_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if len(tokens) != 2:
                raise ParseError("expected '<node_index> <class_index>'", label_path, lineno)
            node, cls = int(tokens[0]), int(tokens[1])
            if not 0 <= node < n:
                raise ConsistencyError(f"{label_path}:{lineno}: node {node} outside feature matrix of {n} rows")
            if cls < 0:
                raise ParseError("class ids must be non-negative", label_path, lineno)
            labels[node] = cls
    graph = KnowledgeHypergraph(n, 1, tuples, [str(i) for i in range(n)], ["edge"], min_arity=1)
    return LabeledHypergraph(graph, features, labels)


def read_index_file(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


# ---------------------------------------------------------------------------
# star expansion


@dataclass
class StarExpansion:
    """Bipartite entity/fact edges labelled by a positional relation id.

    ``edges[:, 0]`` entity, ``edges[:, 1]`` tuple index, ``edges[:, 2]``
    positional relation ``relation * max_arity + position - 1``.
    """

    edges: np.ndarray
    max_arity: int
    relation_count: int
    tuple_count: int

    def __len__(self):
        return len(self.edges)


def positional_relation(relation: int, position: int, max_arity: int) -> int:
    return relation * max_arity + (position - 1)


def hyper_star_expand(hg: KnowledgeHypergraph) -> StarExpansion:
    n = hg.max_arity
    rows = [
        (ent, t_idx, positional_relation(t.relation, pos, n))
        for t_idx, t in enumerate(hg.tuples)
        for pos, ent in enumerate(t.entities, start=1)
    ]
    edges = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return StarExpansion(edges, n, hg.relation_count, len(hg.tuples))


def reconstruct(exp: StarExpansion) -> List[KnowledgeTuple]:
    """Invert :func:`hyper_star_expand`."""
    slots: Dict[int, Dict[int, int]] = {}
    rels: Dict[int, int] = {}
    for ent, t_idx, prel in exp.edges.tolist():
        rel, pos0 = divmod(prel, exp.max_arity)
        if rels.setdefault(t_idx, rel) != rel:
            raise ValueError(f"tuple {t_idx} carries two relations")
        slots.setdefault(t_idx, {})[pos0] = ent
    out = []
    for t_idx in range(exp.tuple_count):
        s = slots[t_idx]
        out.append(KnowledgeTuple(rels[t_idx], tuple(s[p] for p in range(len(s)))))
    return out


def format_expansion(hg: KnowledgeHypergraph, exp: StarExpansion) -> List[str]:
    """Text lines ``<entity> <edge_index> <relation>-<position>``."""
    lines = []
    for ent, t_idx, prel in exp.edges.tolist():
        rel, pos0 = divmod(prel, exp.max_arity)
        ename = hg.entity_names[ent] if hg.entity_names else str(ent)
        rname = hg.relation_names[rel] if hg.relation_names else str(rel)
        lines.append(f"{ename} {t_idx} {rname}-{pos0 + 1}")
    return lines


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitSpec:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    unseen: Optional[np.ndarray] = None  # boolean mask over nodes (inductive mode)

    def __post_init__(self):
        sets = [set(self.train.tolist()), set(self.valid.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("train/valid/test sets overlap")


def make_splits(items, ratios: Sequence[float], rng: np.random.Generator) -> SplitSpec:
    """Shuffle ``items`` (indices or a count) and cut train/valid/test by ``ratios``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) > 1 + 1e-12:
        raise ValueError(f"ratios must be three non-negative numbers summing to <= 1, got {ratios}")
    items = np.arange(items) if np.isscalar(items) else np.asarray(items, dtype=np.int64)
    perm = rng.permutation(items)
    n = len(perm)
    n_train = int(round(ratios[0] * n))
    n_valid = int(round(ratios[1] * n))
    n_test = min(int(round(ratios[2] * n)), n - n_train - n_valid)
    return SplitSpec(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_valid]),
        np.sort(perm[n_train + n_valid : n_train + n_valid + n_test]),
    )


def inductive_mask(node_count: int, unseen_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask marking ``round(unseen_fraction * node_count)`` random nodes as unseen."""
    if not 0 < unseen_fraction < 1:
        raise ValueError(f"unseen_fraction must lie in (0, 1), got {unseen_fraction}")
    mask = np.zeros(node_count, dtype=bool)
    mask[rng.choice(node_count, size=int(round(unseen_fraction * node_count)), replace=False)] = True
    return mask


def inductive_splits(
    labeled: LabeledHypergraph,
    unseen_fraction: float,
    train_fraction: float,
    rng: np.random.Generator,
    valid_fraction: float = 0.0,
) -> SplitSpec:
    """Hold out unseen nodes, then draw training labels from the seen ones.

    Fractions are of the whole node set.  The test set holds every remaining
    labelled seen node plus all labelled unseen nodes; ``unseen`` marks which
    is which.
    """
    n = labeled.graph.entity_count
    unseen = inductive_mask(n, unseen_fraction, rng)
    labeled_ids = labeled.labeled_nodes
    seen_ids = rng.permutation(labeled_ids[~unseen[labeled_ids]])
    n_train = int(round(train_fraction * n))
    n_valid = int(round(valid_fraction * n))
    if n_train + n_valid > len(seen_ids):
        raise ValueError("not enough seen labelled nodes for the requested fractions")
    train = np.sort(seen_ids[:n_train])
    valid = np.sort(seen_ids[n_train : n_train + n_valid])
    test = np.sort(np.concatenate([seen_ids[n_train + n_valid :], labeled_ids[unseen[labeled_ids]]]))
    return SplitSpec(train, valid, test, unseen)


def training_view(hg: KnowledgeHypergraph, unseen: Optional[np.ndarray]) -> KnowledgeHypergraph:
    """Drop every hyperedge touching an unseen node."""
    if unseen is None:
        return hg
    keep = [i for i, t in enumerate(hg.tuples) if not any(unseen[e] for e in t.entities)]
    return hg.subgraph(keep)


# ---------------------------------------------------------------------------
# dataset directories


def load_link_prediction_dir(path, rng: Optional[np.random.Generator] = None, ratios=(0.8, 0.1, 0.1)):
    """Load ``train.txt``/``valid.txt``/``test.txt`` or split a single tuple file.

    Returns ``(graph, SplitSpec)`` with split sets holding tuple indices.
    """
    if os.path.isfile(path):
        hg = parse_tuple_file(path)
        if rng is None:
            raise ValueError("a seeded generator is required to split a single file")
        return hg, make_splits(len(hg.tuples), ratios, rng)
    names = ["train.txt", "valid.txt", "test.txt"]
    files = [os.path.join(path, n) for n in names]
    missing = [f for f in files if not os.path.isfile(f)]
    if missing:
        raise FileNotFoundError(missing[0])
    hg, parts = parse_tuple_files(files)
    return hg, SplitSpec(*parts)


LABELED_FILES = ("hypergraph.txt", "features.txt", "labels.txt")


def load_classification_dir(path):
    """Load the three labelled-hypergraph files and optional ``*.idx`` split files."""
    files = [os.path.join(path, n) for n in LABELED_FILES]
    missing = [f for f in files if not os.path.isfile(f)]
    if missing:
        raise FileNotFoundError(missing[0])
    labeled = parse_labeled_hypergraph(*files)
    split_files = [os.path.join(path, f"{s}.idx") for s in ("train", "valid", "test")]
    split = None
    if all(os.path.isfile(f) for f in split_files):
        split = SplitSpec(*(read_index_file(f) for f in split_files))
    return labeled, split
