"""``h2gnn`` command-line entry point.

Commands: ``train``, ``eval``, ``expand`` and ``check-grad``.  Exit codes are
0 on success, 1 on a runtime or threshold failure and 2 on a usage,
configuration or input error.

Configuration precedence: task defaults < ``--config`` file (``key=value``
lines) < command-line flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from typing import List, Optional

import numpy as np

from . import __version__
from .autodiff import ParamStore
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    format_expansion,
    hyper_star_expand,
    inductive_splits,
    load_classification_dir,
    load_link_prediction_dir,
    make_splits,
    parse_tuple_file,
)
from .encoder import GraphIndex
from .errors import CheckpointError, ConfigError, ConsistencyError, EmptyGraphError, H2GNNError, ParseError
from .metrics import KnownFacts
from .training import (
    ClassifierModel,
    HStarModel,
    TrainConfig,
    classification_report,
    evaluate_ranking,
    predict_classes,
    train_classification,
    train_link_prediction,
)

log = logging.getLogger("h2gnn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
GRAD_THRESHOLD = 1e-4
LP_RATIOS = (0.8, 0.1, 0.1)
NC_RATIOS = (0.2, 0.4, 0.4)
NC_TRAIN_FRACTION = 0.2

# flag -> (TrainConfig field, type, help)
TRAIN_FLAGS = [
    ("--decoder", "decoder", str, "tuple decoder (lp) or softmax (nc)"),
    ("--layers", "layers", int, "number of message-passing layers"),
    ("--dim", "dim", int, "embedding / hidden width"),
    ("--dropout", "dropout", float, "dropout rate in [0, 1)"),
    ("--lr", "learning_rate", float, "learning rate"),
    ("--weight-decay", "weight_decay", float, "decoupled weight decay"),
    ("--epochs", "epochs", int, "training epochs (nc)"),
    ("--iterations", "iterations", int, "training iterations (lp)"),
    ("--batch-size", "batch_size", int, "positive tuples per batch (lp)"),
    ("--neg-ratio", "neg_ratio", int, "negatives per entity position, N (lp)"),
    ("--valid-every", "valid_every", int, "iterations between validation runs (lp)"),
    ("--seed", "seed", int, "seed of the single random generator"),
    ("--unseen-fraction", "unseen_fraction", float, "fraction of nodes held out in inductive mode"),
]


class UsageError(Exception):
    """Bad flags, paths or configuration; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_text(field_name: str) -> str:
    lp = getattr(TrainConfig.for_task("lp"), field_name)
    nc = getattr(TrainConfig.for_task("nc"), field_name)
    return f"default: {lp}" if lp == nc else f"default: {lp} for lp, {nc} for nc"


def _add_shared(p: argparse.ArgumentParser, need_data: bool = True) -> None:
    p.add_argument("--data", required=need_data, help="dataset directory or tuple file")
    p.add_argument("--task", choices=("lp", "nc"), default=None,
                   help="lp = link prediction, nc = node classification (default: lp)")
    for flag, name, typ, text in TRAIN_FLAGS:
        choices = ("m-distmult", "m-transh", "hsimple", "softmax") if flag == "--decoder" else None
        p.add_argument(flag, dest=name, type=typ, default=None, choices=choices,
                       help=f"{text} ({_default_text(name)})")
    p.add_argument("--out", default=None, help="output directory (default: runs/<task>)")
    p.add_argument("--checkpoint", default=None, help="checkpoint path (default: <out>/checkpoint.h2gn)")
    p.add_argument("--raw", action="store_true", default=None, help="raw ranking instead of filtered (default: off)")
    p.add_argument("--inductive", action="store_true", default=None,
                   help="hold out unseen nodes from training message passing (nc; default: off)")
    p.add_argument("--config", default=None, help="key=value file overriding task defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="h2gnn", description="Hyperbolic hyper-star message passing for knowledge hypergraphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write checkpoint, metric log, report and figure")
    _add_shared(p)
    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_shared(p)
    p = sub.add_parser("expand", help="print the hyper-star expansion of a tuple file")
    p.add_argument("--data", required=True, help="knowledge-tuple file")
    p.add_argument("--out", default=None, help="write lines here instead of stdout")
    p = sub.add_parser("check-grad", help="finite-difference check of the full pipeline on a toy graph")
    p.add_argument("--decoder", choices=("m-distmult", "m-transh", "hsimple"), default=None,
                   help="check one decoder (default: all three)")
    p.add_argument("--dim", type=int, default=4, help="embedding width (default: 4)")
    p.add_argument("--max-arity", type=int, default=4, help="arity of the longest toy fact (default: 4)")
    p.add_argument("--eps", type=float, default=1e-5, help="central-difference step (default: 1e-05)")
    p.add_argument("--seed", type=int, default=0, help="parameter seed (default: 0)")
    return parser


# ---------------------------------------------------------------------------
# configuration


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; keys are TrainConfig fields or their flag spellings."""
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    types = {f.name: f.type for f in fields(TrainConfig)}
    aliases = {flag.lstrip("-").replace("-", "_"): name for flag, name, _, _ in TRAIN_FLAGS}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            key = aliases.get(key, key)
            if key not in types:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(value, types[key], f"{path}:{lineno}")
    return out


def _coerce(value: str, typ, where: str):
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if "bool" in name:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if "Optional[int]" in name or name == "int":
            return int(value)
        if name == "float":
            return float(value)
        return value
    except ValueError:
        raise UsageError(f"{where}: cannot parse {value!r} as {name}") from None


def resolve_config(args) -> TrainConfig:
    file_cfg = read_config_file(args.config) if args.config else {}
    task = args.task or file_cfg.pop("task", None) or "lp"
    file_cfg.pop("task", None)
    flags = {name: getattr(args, name) for _, name, _, _ in TRAIN_FLAGS}
    flags["raw"] = args.raw
    flags["inductive"] = args.inductive
    merged = dict(file_cfg)
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        return TrainConfig.for_task(task, **merged)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# data


def dataset_name(path) -> str:
    return os.path.basename(os.path.normpath(str(path)))


def load_lp(path, config: TrainConfig):
    if not os.path.exists(path):
        raise UsageError(f"data path not found: {path}")
    try:
        return load_link_prediction_dir(path, np.random.default_rng(config.seed), LP_RATIOS)
    except FileNotFoundError as exc:
        raise UsageError(f"missing dataset file: {exc.args[0]}") from None


def load_nc(path, config: TrainConfig):
    if not os.path.isdir(path):
        raise UsageError(f"data directory not found: {path}")
    try:
        labeled, split = load_classification_dir(path)
    except FileNotFoundError as exc:
        raise UsageError(f"missing dataset file: {exc.args[0]}") from None
    rng = np.random.default_rng(config.seed)
    if config.inductive:
        split = inductive_splits(labeled, config.unseen_fraction, NC_TRAIN_FRACTION, rng)
    elif split is None:
        split = make_splits(labeled.labeled_nodes, NC_RATIOS, rng)
    return labeled, split


# ---------------------------------------------------------------------------
# commands


def _out_dir(args, task: str) -> str:
    out = args.out or os.path.join("runs", task)
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args) -> int:
    from .report import plot_training_curves

    config = resolve_config(args)
    name = dataset_name(args.data)
    if config.task == "lp":
        hg, split = load_lp(args.data, config)
        if len(split.train) == 0:
            raise UsageError("training split is empty")
        progress = None
        if args.verbose:
            def progress(it, loss):
                if it % config.valid_every == 0:
                    log.info("iteration %d loss %.4f", it, loss)
        result = train_link_prediction(hg, split, config, progress=progress)
        report = {"dataset": name, "decoder": config.decoder}
        report.update(result.report or {"filtered": not config.raw})
    else:
        labeled, split = load_nc(args.data, config)
        result = train_classification(labeled, split, config)
        report = {"dataset": name, "task": "nc", "inductive": bool(config.inductive)}
        report.update(result.report)
    report.update(selected_iteration=result.checkpoint.iteration, val_score=result.checkpoint.val_score)
    out = _out_dir(args, config.task)
    ckpt_path = args.checkpoint or os.path.join(out, "checkpoint.h2gn")
    result.checkpoint.extra = {"dataset": name}
    save_checkpoint(result.checkpoint, ckpt_path)
    result.log.write(os.path.join(out, "metrics.jsonl"))
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    plot_training_curves(result.log, os.path.join(out, "training_curve.png"), title=f"{name} ({config.task})")
    print(json.dumps(report))
    return EXIT_OK


def _config_from_checkpoint(ckpt: Checkpoint, args) -> TrainConfig:
    config = TrainConfig.from_dict(ckpt.config)
    if args.raw is not None:
        config.raw = args.raw
    try:
        config.validate()
    except ConfigError as exc:
        raise CheckpointError(f"checkpoint holds an invalid configuration: {exc}") from None
    return config


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    if not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    config = _config_from_checkpoint(ckpt, args)
    name = dataset_name(args.data)
    if config.task == "lp":
        report = evaluate_lp(ckpt, config, args.data, name)
    else:
        report = evaluate_nc(ckpt, config, args.data, name)
    print(json.dumps(report))
    return EXIT_OK


def _restore(ckpt: Checkpoint, model) -> ParamStore:
    store = ParamStore()
    model.init_params(store, np.random.default_rng(0))
    missing = set(store.names()) - set(ckpt.params)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
    store.load_state_dict(ckpt.params)
    return store


def evaluate_lp(ckpt: Checkpoint, config: TrainConfig, path, name: str) -> dict:
    hg, split = load_lp(path, config)
    train_graph = hg.subgraph(split.train)
    gi = GraphIndex(train_graph, hg.max_arity)
    model = HStarModel(config, hg.entity_count, hg.relation_count, hg.max_arity)
    store = _restore(ckpt, model)
    test = [hg.tuples[i] for i in split.test]
    if not test:
        raise UsageError("test split is empty")
    known = KnownFacts((t.relation, t.entities) for t in hg.tuples)
    rep = evaluate_ranking(model, store, gi, test, known, config.raw)
    report = {"dataset": name, "decoder": config.decoder}
    report.update(rep.as_dict(filtered=not config.raw))
    if config.raw:
        filt = evaluate_ranking(model, store, gi, test, known, raw=False)
        report["paired_filtered"] = filt.as_dict()
        report["per_query_filtered_le_raw"] = bool(np.all(filt.ranks <= rep.ranks))
    return report


def evaluate_nc(ckpt: Checkpoint, config: TrainConfig, path, name: str) -> dict:
    labeled, split = load_nc(path, config)
    graph = labeled.graph
    gi = GraphIndex(graph, graph.max_arity)
    model = ClassifierModel(config, labeled.features.shape[1], max(labeled.num_classes, 2), graph.max_arity)
    store = _restore(ckpt, model)
    probs = predict_classes(model, store, gi, labeled.features)
    report = {"dataset": name, "task": "nc", "inductive": bool(config.inductive)}
    report.update(classification_report(probs, labeled.labels, split))
    return report


def cmd_expand(args) -> int:
    if not os.path.isfile(args.data):
        raise UsageError(f"tuple file not found: {args.data}")
    try:
        hg = parse_tuple_file(args.data)
        lines = format_expansion(hg, hyper_star_expand(hg))
    except EmptyGraphError:
        lines = []
    text = "".join(line + "\n" for line in lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_checkgrad(args) -> int:
    from .gradcheck import pipeline_error

    if not 1e-7 <= args.eps <= 1e-3:
        raise UsageError(f"--eps must lie in [1e-7, 1e-3], got {args.eps}")
    if args.dim < 1:
        raise UsageError("--dim must be >= 1")
    kinds = [args.decoder] if args.decoder else ["m-distmult", "m-transh", "hsimple"]
    worst = 0.0
    print(f"eps = {args.eps:g}")
    for kind in kinds:
        err = pipeline_error(kind, dim=args.dim, max_arity=args.max_arity, eps=args.eps, seed=args.seed)
        worst = max(worst, err)
        status = "ok" if err < GRAD_THRESHOLD else "FAIL"
        print(f"{kind:<11} max relative error {err:.3e}  {status}")
    return EXIT_OK if worst < GRAD_THRESHOLD else EXIT_FAIL


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "expand": cmd_expand, "check-grad": cmd_checkgrad}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, ParseError, ConsistencyError, CheckpointError) as exc:
        print(f"h2gnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except H2GNNError as exc:
        print(f"h2gnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, FloatingPointError, ArithmeticError) as exc:
        print(f"h2gnn {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
