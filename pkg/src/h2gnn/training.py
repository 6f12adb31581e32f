"""Losses, negative sampling and the two training drivers."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import decoders, layers
from .autodiff import Adam, ParamStore, Tape, Var
from .checkpoint import Checkpoint
from .data import (
    KnowledgeHypergraph,
    KnowledgeTuple,
    LabeledHypergraph,
    SplitSpec,
    training_view,
)
from .encoder import EncoderConfig, GraphIndex, encode, init_encoder
from .errors import ConfigError
from .metrics import KnownFacts, RankingReport, accuracy, aggregate, rank_queries

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
PAD_SCORE = -1e30


@dataclass
class TrainConfig:
    task: str = "lp"
    learning_rate: float = 0.05
    weight_decay: float = 0.0
    dropout: float = 0.2
    dim: int = 200
    layers: int = 1
    epochs: int = 200
    iterations: int = 2000
    batch_size: int = 128
    neg_ratio: int = 10
    seed: int = 0
    decoder: str = "hsimple"
    valid_every: int = 50
    valid_limit: Optional[int] = None
    sum_reduction: bool = False
    share_relations: bool = False
    init_scale: float = 0.1
    raw: bool = False
    inductive: bool = False
    unseen_fraction: float = 0.4

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        """Defaults for ``task`` ("nc" or "lp"), then ``overrides``."""
        if task == "nc":
            base = dict(task="nc", learning_rate=0.01, weight_decay=5e-5, dropout=0.5, dim=8, layers=2,
                        epochs=200, decoder="softmax")
        elif task == "lp":
            base = dict(task="lp")
        else:
            raise ConfigError(f"unknown task {task!r}")
        base.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**base)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def validate(self) -> None:
        if self.task not in ("nc", "lp"):
            raise ConfigError(f"unknown task {self.task!r}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        for name in ("dim", "layers", "batch_size", "neg_ratio", "valid_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name.replace('_', '-')} must be >= 1")
        for name in ("epochs", "iterations"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.task == "lp" and self.decoder not in decoders.DECODERS:
            raise ConfigError(f"decoder {self.decoder!r} is not a link-prediction decoder")
        if self.task == "nc" and self.decoder != "softmax":
            raise ConfigError("node classification uses the softmax decoder")
        if not 0 < self.unseen_fraction < 1:
            raise ConfigError("unseen fraction must lie in (0, 1)")

    def encoder_config(self) -> EncoderConfig:
        mode = "classification" if self.task == "nc" else "link_prediction"
        return EncoderConfig(layers=self.layers, dim=self.dim, dropout=self.dropout, mode=mode)


class MetricLog:
    """Accumulates ``{iter, split, metric, value, seed}`` records."""

    def __init__(self, seed: int):
        self.seed = seed
        self.records: List[dict] = []

    def add(self, it: int, split: str, metric: str, value: float) -> None:
        self.records.append({"iter": int(it), "split": split, "metric": metric, "value": float(value),
                             "seed": self.seed})

    def lines(self) -> List[str]:
        return [json.dumps(r, sort_keys=False) for r in self.records]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def series(self, split: str, metric: str):
        pts = [(r["iter"], r["value"]) for r in self.records if r["split"] == split and r["metric"] == metric]
        return [p[0] for p in pts], [p[1] for p in pts]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: MetricLog
    report: dict = field(default_factory=dict)
    store: Optional[ParamStore] = None


# ---------------------------------------------------------------------------
# negative sampling and losses


def sample_negatives(x: KnowledgeTuple, N: int, entity_count: int, rng: np.random.Generator) -> List[KnowledgeTuple]:
    """``N * arity`` corruptions of ``x``; negative ``i*N + j`` replaces position ``i + 1``.

    Replacements are drawn uniformly from every entity except the original
    one at that position.  Negatives are not filtered against known facts.
    """
    if entity_count <= 1:
        raise ValueError("need at least two entities to corrupt a tuple")
    if N < 1:
        raise ValueError("negative ratio N must be >= 1")
    ents = np.asarray(x.entities)
    draws = rng.integers(0, entity_count - 1, size=(len(ents), N))
    draws = draws + (draws >= ents[:, None])
    out = []
    for i in range(len(ents)):
        for j in range(N):
            e = list(x.entities)
            e[i] = int(draws[i, j])
            out.append(KnowledgeTuple(x.relation, tuple(e)))
    return out


def lp_loss(pos_score: float, neg_scores: Sequence[float]) -> float:
    """``-log(exp(g) / (exp(g) + sum exp(g')))`` for one positive."""
    allv = np.concatenate([[pos_score], np.asarray(neg_scores, dtype=np.float64)])
    m = np.max(allv)
    return float(m + np.log(np.sum(np.exp(allv - m))) - pos_score)


def nll_loss(probabilities, gold, mask):
    """Mean negative log-likelihood of the gold class over ``mask``.

    Accepts a tape ``Var`` (returns a ``Var``) or a plain array (returns a float).
    """
    idx = np.asarray(mask)
    idx = np.flatnonzero(idx) if idx.dtype == bool else idx.astype(np.int64)
    if idx.size == 0:
        raise ValueError("nll_loss over an empty mask")
    gold = np.asarray(gold, dtype=np.int64)
    if not isinstance(probabilities, Var):
        p = np.asarray(probabilities, dtype=np.float64)[idx, gold[idx]]
        return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))
    p = probabilities[idx, gold[idx]]
    return -ad.sum(ad.log(ad.clamp_min(p, PROB_FLOOR))) / float(idx.size)


def batch_lp_loss(scores: Var, groups: np.ndarray, sum_reduction: bool = False) -> Var:
    """Cross-entropy of each positive against its own negatives.

    ``groups`` is a ``(B, 1 + K)`` index array into ``scores`` whose first
    column is the positive; ``-1`` marks padding.
    """
    flat = ad.concat([scores, scores.tape.const(np.array([PAD_SCORE]))], axis=0)
    idx = np.where(groups >= 0, groups, len(scores.value))
    mat = flat[idx]
    per = ad.logsumexp(mat, axis=1) - mat[:, 0]
    total = ad.sum(per)
    return total if sum_reduction else total / float(groups.shape[0])


# ---------------------------------------------------------------------------
# link prediction


class HStarModel:
    """Hyper-star encoder feeding a tuple decoder; the default link-prediction model."""

    def __init__(self, config: TrainConfig, entity_count: int, relation_count: int, max_arity: int):
        self.config = config
        self.enc = config.encoder_config()
        self.entity_count = entity_count
        self.relation_count = relation_count
        self.max_arity = max_arity

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        init_encoder(store, self.enc, self.entity_count, self.relation_count, self.max_arity, rng,
                     init_scale=self.config.init_scale)
        decoders.init_decoder(store, self.config.decoder, self.relation_count, self.max_arity,
                              self.config.dim, rng)

    def entity_vectors(self, tape: Tape, store: ParamStore, gi: GraphIndex, train: bool,
                       rng: Optional[np.random.Generator]) -> Var:
        return layers.to_tangent(encode(tape, store, gi, self.enc, rng, train), self.enc.k)

    def after_step(self, store: ParamStore) -> None:
        decoders.renormalize(store)


def _negatives_batch(batch: Sequence[KnowledgeTuple], N: int, entity_count: int, rng, width: int):
    rels, rows, groups = [], [], []
    pos_rows = [t.entities for t in batch]
    negs_all = [sample_negatives(t, N, entity_count, rng) for t in batch]
    B = len(batch)
    K = N * width
    groups = np.full((B, 1 + K), -1, dtype=np.int64)
    rels = [t.relation for t in batch]
    rows = list(pos_rows)
    cursor = B
    for b, negs in enumerate(negs_all):
        groups[b, 0] = b
        for j, n in enumerate(negs):
            rels.append(n.relation)
            rows.append(n.entities)
            groups[b, 1 + j] = cursor
            cursor += 1
    return np.asarray(rels, dtype=np.int64), decoders.pad_tuples(rows, width), groups


def link_prediction_loss(model, tape: Tape, store: ParamStore, gi: GraphIndex, batch: Sequence[KnowledgeTuple],
                         neg_ratio: int, rng: np.random.Generator, train: bool = True) -> Var:
    """Encode, score a batch with its sampled negatives and apply the cross-entropy."""
    cfg = model.config
    rels, ents, groups = _negatives_batch(batch, neg_ratio, gi.entity_count, rng, model.max_arity)
    vecs = model.entity_vectors(tape, store, gi, train, rng)
    scores = decoders.batch_scores(tape, store, cfg.decoder, vecs, rels, ents, model.max_arity,
                                   cfg.share_relations)
    return batch_lp_loss(scores, groups, cfg.sum_reduction)


def evaluate_ranking(model, store: ParamStore, gi: GraphIndex, tuples: Sequence[KnowledgeTuple],
                     known: KnownFacts, raw: bool = False) -> RankingReport:
    tape = Tape()
    vecs = model.entity_vectors(tape, store, gi, False, None).value
    cfg = model.config

    def score_all(rel, ents, pos):
        return decoders.score_candidates(cfg.decoder, store.value, vecs, rel, ents, pos, model.max_arity,
                                         cfg.share_relations)

    ranks = rank_queries(score_all, [(t.relation, t.entities) for t in tuples], known, raw)
    return aggregate(ranks)


def train_link_prediction(hg: KnowledgeHypergraph, split: SplitSpec, config: TrainConfig,
                          model_factory: Callable = HStarModel,
                          progress: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Mini-batch training with validation MRR driving checkpoint selection."""
    config.validate()
    if config.neg_ratio < 1:
        raise ConfigError("neg_ratio must be >= 1")
    rng = np.random.default_rng(config.seed)
    max_arity = hg.max_arity
    train_graph = hg.subgraph(split.train)
    gi = GraphIndex(train_graph, max_arity)
    model = model_factory(config, hg.entity_count, hg.relation_count, max_arity)
    store = ParamStore()
    model.init_params(store, rng)
    opt = Adam(config.learning_rate, config.weight_decay)
    known = KnownFacts((t.relation, t.entities) for t in hg.tuples)
    valid = [hg.tuples[i] for i in split.valid]
    if config.valid_limit is not None and len(valid) > config.valid_limit:
        valid = valid[: config.valid_limit]
    test = [hg.tuples[i] for i in split.test]
    mlog = MetricLog(config.seed)

    def validate(it):
        if not valid:
            return float("nan")
        rep = evaluate_ranking(model, store, gi, valid, known, config.raw)
        mlog.add(it, "valid", "mrr", rep.mrr)
        return rep.mrr

    best_score = validate(0)
    best_state, best_iter = store.state_dict(), 0
    n_train = len(train_graph.tuples)
    for it in range(1, config.iterations + 1):
        bs = min(config.batch_size, n_train)
        batch_idx = np.sort(rng.choice(n_train, size=bs, replace=False))
        batch = [train_graph.tuples[i] for i in batch_idx]
        tape = Tape()
        loss = link_prediction_loss(model, tape, store, gi, batch, config.neg_ratio, rng, train=True)
        ad.backward(loss, store)
        opt.step(store)
        model.after_step(store)
        mlog.add(it, "train", "loss", float(loss.value))
        if progress is not None:
            progress(it, float(loss.value))
        if it % config.valid_every == 0 or it == config.iterations:
            score = validate(it)
            if not valid or score > best_score:
                best_score, best_state, best_iter = score, store.state_dict(), it
    store.load_state_dict(best_state)
    report = {}
    if test:
        rep = evaluate_ranking(model, store, gi, test, known, config.raw)
        for key, val in rep.as_dict().items():
            if key != "n_queries":
                mlog.add(best_iter, "test", key, val)
        report = rep.as_dict(filtered=not config.raw)
    ckpt = Checkpoint(store.state_dict(), asdict(config), float(best_score), best_iter)
    return TrainResult(ckpt, mlog, report, store)


# ---------------------------------------------------------------------------
# node classification


class ClassifierModel:
    def __init__(self, config: TrainConfig, feature_dim: int, classes: int, max_arity: int):
        self.config = config
        self.enc = config.encoder_config()
        self.feature_dim = feature_dim
        self.classes = classes
        self.max_arity = max_arity

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        init_encoder(store, self.enc, 0, 1, self.max_arity, rng, feature_dim=self.feature_dim,
                     init_scale=self.config.init_scale)
        decoders.init_classifier(store, self.config.dim, self.classes, rng)

    def probabilities(self, tape: Tape, store: ParamStore, gi: GraphIndex, features: np.ndarray, train: bool,
                      rng: Optional[np.random.Generator]) -> Var:
        x = encode(tape, store, gi, self.enc, rng, train, features=features)
        return decoders.batch_softmax(tape, store, layers.to_tangent(x, self.enc.k))


def predict_classes(model: ClassifierModel, store: ParamStore, gi: GraphIndex, features: np.ndarray) -> np.ndarray:
    tape = Tape()
    return model.probabilities(tape, store, gi, features, False, None).value


def classification_report(probs: np.ndarray, labels: np.ndarray, split: SplitSpec) -> Dict[str, float]:
    out = {"test_accuracy": accuracy(probs, labels, split.test)}
    if split.unseen is not None:
        seen = split.test[~split.unseen[split.test]]
        unseen = split.test[split.unseen[split.test]]
        if seen.size:
            out["seen_accuracy"] = accuracy(probs, labels, seen)
        if unseen.size:
            out["unseen_accuracy"] = accuracy(probs, labels, unseen)
    return out


def train_classification(data: LabeledHypergraph, split: SplitSpec, config: TrainConfig) -> TrainResult:
    """Full-graph training; validation accuracy selects the reported checkpoint.

    In inductive mode (``split.unseen`` set) message passing during training
    sees only hyperedges free of unseen nodes; evaluation uses the full graph.
    Without a validation set the last epoch is kept.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    graph = data.graph
    max_arity = graph.max_arity
    gi_train = GraphIndex(training_view(graph, split.unseen), max_arity)
    gi_eval = GraphIndex(graph, max_arity) if split.unseen is not None else gi_train
    model = ClassifierModel(config, data.features.shape[1], max(data.num_classes, 2), max_arity)
    store = ParamStore()
    model.init_params(store, rng)
    opt = Adam(config.learning_rate, config.weight_decay)
    labels = data.labels
    mlog = MetricLog(config.seed)
    has_valid = split.valid.size > 0

    def validate(it):
        probs = predict_classes(model, store, gi_eval, data.features)
        if has_valid:
            acc = accuracy(probs, labels, split.valid)
            mlog.add(it, "valid", "accuracy", acc)
            return acc
        return float("nan")

    best_score = validate(0)
    best_state, best_iter = store.state_dict(), 0
    for epoch in range(1, config.epochs + 1):
        tape = Tape()
        probs = model.probabilities(tape, store, gi_train, data.features, True, rng)
        loss = nll_loss(probs, labels, split.train)
        ad.backward(loss, store)
        opt.step(store)
        mlog.add(epoch, "train", "loss", float(loss.value))
        score = validate(epoch)
        # ties go to the later epoch: the small validation sets used here saturate early
        if not has_valid or score >= best_score:
            best_score, best_state, best_iter = score, store.state_dict(), epoch
    store.load_state_dict(best_state)
    probs = predict_classes(model, store, gi_eval, data.features)
    report = {}
    if split.test.size:
        report = classification_report(probs, labels, split)
        for key, val in report.items():
            mlog.add(best_iter, "test", key, val)
    ckpt = Checkpoint(store.state_dict(), asdict(config), float(best_score), best_iter)
    return TrainResult(ckpt, mlog, report, store)
