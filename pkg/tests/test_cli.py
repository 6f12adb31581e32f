import json
import struct

import numpy as np
import pytest

from h2gnn.checkpoint import VERSION
from h2gnn.cli import build_parser, main, read_config_file, resolve_config
from h2gnn.data import parse_tuple_file, reconstruct, hyper_star_expand
from h2gnn.synthetic import clustered_hypergraph, compositional_kb

FAST_LP = ["--dim", "8", "--iterations", "6", "--valid-every", "3", "--batch-size", "32", "--decoder", "m-distmult"]


@pytest.fixture(scope="module")
def kb_file(tmp_path_factory):
    hg = compositional_kb(40, 3)
    path = tmp_path_factory.mktemp("kb") / "kb.txt"
    lines = [" ".join([hg.relation_names[t.relation]] + [hg.entity_names[e] for e in t.entities]) for t in hg.tuples]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def nc_dir(tmp_path_factory):
    data = clustered_hypergraph(0)
    d = tmp_path_factory.mktemp("nc")
    (d / "hypergraph.txt").write_text("\n".join(" ".join(map(str, t.entities)) for t in data.graph.tuples) + "\n")
    np.savetxt(d / "features.txt", data.features)
    (d / "labels.txt").write_text("\n".join(f"{i} {c}" for i, c in enumerate(data.labels)) + "\n")
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help_lists_flags_with_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--data", "--task", "--decoder", "--layers", "--dim", "--dropout", "--lr", "--weight-decay",
                 "--epochs", "--iterations", "--batch-size", "--neg-ratio", "--seed", "--out", "--checkpoint",
                 "--raw", "--inductive", "--unseen-fraction", "--config"):
        assert flag in text
    flat = " ".join(text.split())
    assert "default: 0.05 for lp, 0.01 for nc" in flat
    assert "default: 200 for lp, 8 for nc" in flat
    assert "default: 10" in flat and "default: 128" in flat


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", "x", "--bogus"])
    assert exc.value.code == 2


def test_train_then_eval_agree(tmp_path, kb_file, capsys):
    out = tmp_path / "run"
    code, text, _ = run(capsys, "train", "--data", kb_file, "--out", out, "--seed", 3, *FAST_LP)
    assert code == 0
    report = json.loads(text)
    for name in ("checkpoint.h2gn", "metrics.jsonl", "report.json", "training_curve.png"):
        assert (out / name).is_file()
    assert json.loads((out / "report.json").read_text()) == report
    code, text, _ = run(capsys, "eval", "--data", kb_file, "--checkpoint", out / "checkpoint.h2gn")
    assert code == 0
    again = json.loads(text)
    for key in ("mrr", "hits1", "hits3", "hits10", "n_queries"):
        assert again[key] == report[key]


def test_eval_raw_prints_paired_filtered(tmp_path, kb_file, capsys):
    out = tmp_path / "run"
    assert run(capsys, "train", "--data", kb_file, "--out", out, *FAST_LP)[0] == 0
    code, text, _ = run(capsys, "eval", "--data", kb_file, "--checkpoint", out / "checkpoint.h2gn", "--raw")
    rep = json.loads(text)
    assert code == 0 and rep["filtered"] is False
    assert rep["per_query_filtered_le_raw"] is True
    assert rep["paired_filtered"]["mrr"] >= rep["mrr"]


def test_same_seed_gives_identical_metric_logs(tmp_path, kb_file, capsys):
    for name in ("a", "b"):
        assert run(capsys, "train", "--data", kb_file, "--out", tmp_path / name, "--seed", 5, *FAST_LP)[0] == 0
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    first = json.loads((tmp_path / "a" / "metrics.jsonl").read_text().splitlines()[0])
    assert set(first) == {"iter", "split", "metric", "value", "seed"} and first["seed"] == 5


def test_node_classification_train_and_eval(tmp_path, nc_dir, capsys):
    out = tmp_path / "nc"
    code, text, _ = run(capsys, "train", "--task", "nc", "--data", nc_dir, "--out", out, "--epochs", 20)
    assert code == 0
    rep = json.loads(text)
    code, text, _ = run(capsys, "eval", "--task", "nc", "--data", nc_dir, "--checkpoint", out / "checkpoint.h2gn")
    assert code == 0 and json.loads(text)["test_accuracy"] == rep["test_accuracy"]


def test_inductive_report(tmp_path, nc_dir, capsys):
    code, text, _ = run(capsys, "train", "--task", "nc", "--data", nc_dir, "--out", tmp_path, "--epochs", 5,
                        "--inductive", "--unseen-fraction", 0.4)
    rep = json.loads(text)
    assert code == 0 and rep["inductive"] is True and "unseen_accuracy" in rep


def test_missing_data_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    code, _, err = run(capsys, "train", "--data", missing)
    assert code == 2 and str(missing) in err


def test_bad_dropout_is_usage_error(kb_file, capsys):
    code, _, err = run(capsys, "train", "--data", kb_file, "--dropout", 1.5)
    assert code == 2 and "dropout" in err


def test_checkpoint_problems_exit_2(tmp_path, kb_file, capsys):
    out = tmp_path / "run"
    assert run(capsys, "train", "--data", kb_file, "--out", out, *FAST_LP)[0] == 0
    ck = out / "checkpoint.h2gn"
    raw = bytearray(ck.read_bytes())
    bad_version = tmp_path / "v.h2gn"
    bad_version.write_bytes(bytes(raw[:4] + struct.pack("<I", 9) + raw[8:]))
    code, _, err = run(capsys, "eval", "--data", kb_file, "--checkpoint", bad_version)
    assert code == 2 and "9" in err and str(VERSION) in err
    bad_magic = tmp_path / "m.h2gn"
    bad_magic.write_bytes(b"NOPE" + bytes(raw[4:]))
    assert run(capsys, "eval", "--data", kb_file, "--checkpoint", bad_magic)[0] == 2


def test_expand_roster(tmp_path, capsys):
    f = tmp_path / "r.txt"
    f.write_text("Roster Hawking Penrose Ellis\n")
    code, text, _ = run(capsys, "expand", "--data", f)
    assert code == 0
    assert text.splitlines() == ["Hawking 0 Roster-1", "Penrose 0 Roster-2", "Ellis 0 Roster-3"]


def test_expand_empty_and_roundtrip(tmp_path, kb_file, capsys):
    f = tmp_path / "empty.txt"
    f.write_text("")
    assert run(capsys, "expand", "--data", f) == (0, "", "")
    hg = parse_tuple_file(kb_file)
    assert reconstruct(hyper_star_expand(hg)) == hg.tuples


def test_expand_parse_error_has_line(tmp_path, capsys):
    f = tmp_path / "bad.txt"
    f.write_text("r a b\nr a\n")
    code, _, err = run(capsys, "expand", "--data", f)
    assert code == 2 and "2" in err


def test_check_grad(capsys):
    code, text, _ = run(capsys, "check-grad", "--eps", "1e-5", "--decoder", "m-distmult")
    assert code == 0 and "eps = 1e-05" in text
    code, _, err = run(capsys, "check-grad", "--decoder", "hsimple", "--dim", 6, "--max-arity", 4)
    assert code == 2 and "divisible" in err


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# overrides\nlr = 0.2\ndim=16\nneg-ratio = 3\n")
    assert read_config_file(cfg) == {"learning_rate": 0.2, "dim": 16, "neg_ratio": 3}
    args = build_parser().parse_args(["train", "--data", "x", "--config", str(cfg), "--dim", "24"])
    c = resolve_config(args)
    assert (c.learning_rate, c.dim, c.neg_ratio, c.batch_size) == (0.2, 24, 3, 128)


def test_config_file_errors(tmp_path, kb_file, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "train", "--data", kb_file, "--config", cfg)
    assert code == 2 and "colour" in err
