"""Tuple scoring heads and the node classifier.

Decoders act on tangent vectors at the origin (see
:func:`h2gnn.lorentz.to_tangent`).  The single-tuple numpy functions are the
readable definitions; the ``batch_*`` functions are the tape versions used
for training and ranking and are checked against them.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var
from .errors import ConfigError
from .lorentz import to_tangent  # noqa: F401 - re-exported as part of the decoder surface

DECODERS = ("m-distmult", "m-transh", "hsimple")


def _stack(entity_vecs) -> np.ndarray:
    e = np.asarray(entity_vecs, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ValueError("at least two entity vectors are required")
    return e


def score_mdistmult(r_vec, entity_vecs) -> float:
    """``sum_j r_j prod_i e_ij``."""
    e = _stack(entity_vecs)
    return float(np.sum(np.asarray(r_vec) * np.prod(e, axis=0)))


def hsimple_shift(position: int, dim: int, max_arity: int) -> int:
    """Rotation applied to the entity at 1-based ``position``."""
    if dim % max_arity:
        raise ConfigError(f"HSimplE needs dim divisible by max arity ({dim} % {max_arity} != 0)")
    return (position - 1) * dim // max_arity


def score_hsimple(r_vec, entity_vecs, max_arity: int) -> float:
    e = _stack(entity_vecs)
    d = e.shape[1]
    prod = np.ones(d)
    for i, row in enumerate(e, start=1):
        prod = prod * np.roll(row, hsimple_shift(i, d, max_arity))
    return float(np.sum(np.asarray(r_vec) * prod))


def score_mtransh(normal, weights, entity_vecs, translation=None) -> float:
    """``-|| sum_i a_i P(e_i) + P(b_r) ||^2`` with ``P`` the projection off ``normal``.

    ``translation`` defaults to zero, which leaves the position-weighted sum
    of projected entities.
    """
    e = _stack(entity_vecs)
    w = np.asarray(normal, dtype=np.float64)
    a = np.asarray(weights, dtype=np.float64)[: e.shape[0]]
    proj = e - np.outer(e @ w, w)
    acc = a @ proj
    if translation is not None:
        t = np.asarray(translation, dtype=np.float64)
        acc = acc + t - (t @ w) * w
    return float(-np.sum(acc * acc))


def classify_softmax(node_vec, weight, bias) -> np.ndarray:
    logits = np.asarray(weight) @ np.asarray(node_vec) + np.asarray(bias)
    z = np.exp(logits - np.max(logits))
    return z / np.sum(z)


# ---------------------------------------------------------------------------
# parameters


def init_decoder(store: ParamStore, kind: str, relation_count: int, max_arity: int, dim: int,
                 rng: np.random.Generator, scale: float = 1.0) -> None:
    if kind not in DECODERS:
        raise ConfigError(f"unknown decoder {kind!r}")
    if kind == "hsimple":
        hsimple_shift(1, dim, max_arity)
    store.add("dec.relation", rng.normal(scale=scale, size=(relation_count, dim)))
    if kind == "m-transh":
        w = rng.normal(size=(relation_count, dim))
        store.add("dec.normal", w / np.linalg.norm(w, axis=1, keepdims=True))
        store.add("dec.position_weight", rng.normal(scale=1.0, size=(relation_count, max_arity)))
        store["dec.relation"][:] *= 0.1


def renormalize(store: ParamStore) -> None:
    """Keep mTransH normals on the unit sphere after an optimiser step."""
    if "dec.normal" in store:
        w = store.value["dec.normal"]
        w /= np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-12)


def init_classifier(store: ParamStore, dim: int, classes: int, rng: np.random.Generator) -> None:
    bound = np.sqrt(6.0 / (dim + classes))
    store.add("cls.W", rng.uniform(-bound, bound, size=(classes, dim)))
    store.add("cls.b", np.zeros(classes))


# ---------------------------------------------------------------------------
# batched tape versions


def batch_scores(tape: Tape, store: ParamStore, kind: str, entity_vecs: Var, relations, entities,
                 max_arity: int, share_relations: bool = False) -> Var:
    """Score ``B`` tuples at once.

    ``entities`` is a ``(B, A)`` integer array padded with ``-1``;
    ``entity_vecs`` holds one tangent row per entity.
    """
    relations = np.asarray(relations, dtype=np.int64)
    entities = np.asarray(entities, dtype=np.int64)
    V, d = entity_vecs.shape
    rel_table = tape.param(store, "relation" if share_relations else "dec.relation")
    r = rel_table[relations]
    mask = entities >= 0
    idx = np.where(mask, entities, V)

    if kind == "m-transh":
        padded = ad.concat([entity_vecs, tape.const(np.zeros((1, d)))], axis=0)
        w = tape.param(store, "dec.normal")[relations]
        a = tape.param(store, "dec.position_weight")[relations]
        acc = r - w * ad.reshape(ad.dot(w, r), (len(relations), 1))
        for i in range(entities.shape[1]):
            e = padded[idx[:, i]]
            proj = e - w * ad.reshape(ad.dot(w, e), (len(relations), 1))
            coef = a[:, i : i + 1] * mask[:, i : i + 1].astype(np.float64)
            acc = acc + proj * coef
        return -ad.sum(acc * acc, axis=-1)

    padded = ad.concat([entity_vecs, tape.const(np.ones((1, d)))], axis=0)
    prod = None
    for i in range(entities.shape[1]):
        e = padded[idx[:, i]]
        if kind == "hsimple":
            s = hsimple_shift(i + 1, d, max_arity)
            if s:
                e = e[:, (np.arange(d) - s) % d]
        elif kind != "m-distmult":
            raise ConfigError(f"unknown decoder {kind!r}")
        prod = e if prod is None else prod * e
    return ad.dot(r, prod)


def batch_softmax(tape: Tape, store: ParamStore, node_vecs: Var) -> Var:
    """Row-wise class probabilities with max subtraction."""
    logits = node_vecs @ tape.param(store, "cls.W").T + tape.param(store, "cls.b")
    z = ad.exp(logits - ad.max(logits, axis=-1, keepdims=True))
    return z / ad.sum(z, axis=-1, keepdims=True)


def pad_tuples(tuples: Sequence, width: int) -> np.ndarray:
    out = np.full((len(tuples), width), -1, dtype=np.int64)
    for i, t in enumerate(tuples):
        out[i, : len(t)] = t
    return out


def score_candidates(kind: str, params: dict, entity_vecs: np.ndarray, rel: int, ents: Sequence[int],
                     pos: int, max_arity: int, share_relations: bool = False) -> np.ndarray:
    """Scores of every entity substituted at 0-based ``pos`` of ``(rel, ents)``.

    Each decoder is linear or quadratic in the substituted entity, so the
    other positions fold into one query vector and all candidates are scored
    with a single matrix product.
    """
    E = np.asarray(entity_vecs)
    d = E.shape[1]
    r = params["relation" if share_relations else "dec.relation"][rel]
    if kind == "m-transh":
        w = params["dec.normal"][rel]
        a = params["dec.position_weight"][rel]
        base = r - (r @ w) * w
        for i, e in enumerate(ents):
            if i != pos:
                v = E[e]
                base = base + a[i] * (v - (v @ w) * w)
        cw = E @ w
        proj_sq = np.sum(E * E, axis=1) - cw * cw
        return -(base @ base + 2.0 * a[pos] * (E @ base - (base @ w) * cw) + a[pos] ** 2 * proj_sq)
    q = np.array(r, dtype=np.float64)
    for i, e in enumerate(ents):
        if i == pos:
            continue
        v = E[e]
        if kind == "hsimple":
            v = np.roll(v, hsimple_shift(i + 1, d, max_arity))
        q = q * v
    if kind == "hsimple":
        q = np.roll(q, -hsimple_shift(pos + 1, d, max_arity))
    elif kind != "m-distmult":
        raise ConfigError(f"unknown decoder {kind!r}")
    return E @ q
