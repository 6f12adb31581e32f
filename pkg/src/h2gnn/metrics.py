"""Ranking metrics (MRR, Hits@k) under the filtered protocol, and accuracy."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np

HITS_AT = (1, 3, 10)

TupleKey = Tuple[int, Tuple[int, ...]]


@dataclass
class RankingReport:
    mrr: float
    hits: Dict[int, float]
    ranks: np.ndarray = field(repr=False)

    @property
    def n_queries(self) -> int:
        return int(len(self.ranks))

    def as_dict(self, **extra) -> dict:
        out = dict(extra)
        out.update(
            mrr=self.mrr,
            hits1=self.hits[1],
            hits3=self.hits[3],
            hits10=self.hits[10],
            n_queries=self.n_queries,
        )
        return out


def aggregate(ranks: Iterable[int]) -> RankingReport:
    r = np.asarray(list(ranks), dtype=np.int64)
    if r.size == 0:
        raise ValueError("cannot aggregate an empty rank list")
    if np.any(r < 1):
        raise ValueError("ranks start at 1")
    return RankingReport(
        mrr=float(np.mean(1.0 / r)),
        hits={k: float(np.mean(r <= k)) for k in HITS_AT},
        ranks=r,
    )


def accuracy(predictions, gold, mask) -> float:
    """Fraction of masked rows whose argmax equals ``gold``, rounded to 4 places.

    ``predictions`` may be class ids (1-D) or per-class scores (2-D);
    ``mask`` is a boolean mask or an index array.
    """
    pred = np.asarray(predictions)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    gold = np.asarray(gold)
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if idx.size == 0:
        raise ValueError("accuracy over an empty mask")
    return round(float(np.mean(pred[idx] == gold[idx])), 4)


class KnownFacts:
    """Index of true facts keyed by (relation, position, the other entities)."""

    def __init__(self, facts: Iterable[TupleKey]):
        self.index: Dict[tuple, set] = defaultdict(set)
        for rel, ents in facts:
            for pos in range(len(ents)):
                self.index[_blank(rel, ents, pos)].add(ents[pos])

    def filler(self, rel: int, ents: Sequence[int], pos: int) -> set:
        """Entities known to complete the fact with slot ``pos`` (0-based) blanked."""
        return self.index.get(_blank(rel, tuple(ents), pos), set())


def _blank(rel, ents, pos):
    return (rel, pos, ents[:pos] + (-1,) + ents[pos + 1 :])


def rank_from_scores(scores: np.ndarray, true_entity: int, exclude: Iterable[int] = ()) -> int:
    """``1 + #{candidates scoring strictly above the truth}``, ignoring ``exclude``."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = scores[true_entity]
    better = scores > truth
    for e in exclude:
        if e != true_entity:
            better[e] = False
    return int(np.sum(better)) + 1


def rank_entity(test_tuple: TupleKey, position: int, score_fn: Callable[[TupleKey], float],
                entity_count: int, known: Iterable[TupleKey] = (), raw: bool = False) -> int:
    """Rank the true entity at 1-based ``position`` against every substitution.

    Reference implementation: builds each candidate tuple and scores it
    individually.  Candidates forming another known fact are dropped unless
    ``raw`` is set.
    """
    rel, ents = test_tuple
    ents = tuple(ents)
    if not 1 <= position <= len(ents):
        raise ValueError(f"position {position} outside 1..{len(ents)}")
    p = position - 1
    known_set = {(r, tuple(e)) for r, e in known}
    truth = score_fn((rel, ents))
    rank = 1
    for cand in range(entity_count):
        if cand == ents[p]:
            continue
        cand_tuple = (rel, ents[:p] + (cand,) + ents[p + 1 :])
        if not raw and cand_tuple in known_set:
            continue
        if score_fn(cand_tuple) > truth:
            rank += 1
    return rank


def rank_queries(score_all: Callable[[int, Tuple[int, ...], int], np.ndarray],
                 tuples: Sequence[TupleKey], known: KnownFacts, raw: bool = False) -> np.ndarray:
    """Ranks for every (tuple, position) query, pooled in tuple-major order.

    ``score_all(rel, ents, pos)`` returns the scores of all entity
    substitutions at 0-based ``pos``.
    """
    ranks: List[int] = []
    for rel, ents in tuples:
        ents = tuple(ents)
        for pos in range(len(ents)):
            scores = score_all(rel, ents, pos)
            exclude = () if raw else known.filler(rel, ents, pos)
            ranks.append(rank_from_scores(scores, ents[pos], exclude))
    return np.asarray(ranks, dtype=np.int64)
