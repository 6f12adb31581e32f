import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2gnn.data import (
    KnowledgeHypergraph,
    KnowledgeTuple,
    build_incidence,
    format_expansion,
    hyper_star_expand,
    inductive_mask,
    inductive_splits,
    load_classification_dir,
    load_link_prediction_dir,
    make_splits,
    parse_labeled_hypergraph,
    parse_tuple_file,
    positional_relation,
    reconstruct,
    training_view,
)
from h2gnn.errors import ConsistencyError, EmptyGraphError, ParseError
from h2gnn.synthetic import clustered_hypergraph


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestParseTupleFile:
    def test_single_fact(self, tmp_path):
        hg = parse_tuple_file(write(tmp_path, "kb.txt", "education hawking oxford ba\n"))
        assert len(hg.tuples) == 1
        assert hg.tuples[0].arity == 3
        assert hg.entity_count == 3 and hg.relation_count == 1
        assert hg.entity_names == ["hawking", "oxford", "ba"]

    def test_duplicates_kept(self, tmp_path):
        hg = parse_tuple_file(write(tmp_path, "kb.txt", "r a b\nr a b\n"))
        assert len(hg.tuples) == 2
        assert hg.incidence[0] == [(0, 1), (1, 1)]

    def test_short_line_names_line(self, tmp_path):
        p = write(tmp_path, "kb.txt", "r a b\n\nr only\n")
        with pytest.raises(ParseError) as err:
            parse_tuple_file(p)
        assert err.value.line == 3
        assert ":3:" in str(err.value)

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyGraphError):
            parse_tuple_file(write(tmp_path, "kb.txt", "# nothing here\n\n"))

    def test_whitespace_and_comments(self, tmp_path):
        hg = parse_tuple_file(write(tmp_path, "kb.txt", "# header\nr1\ta   b\n  r2 b  c d \n"))
        assert [t.entities for t in hg.tuples] == [(0, 1), (1, 2, 3)]
        assert hg.arity_histogram() == {2: 1, 3: 1}
        assert hg.max_arity == 3

    def test_deterministic_ids(self, tmp_path):
        text = "r x y z\ns z w\nr w x y\n"
        a = parse_tuple_file(write(tmp_path, "a.txt", text))
        b = parse_tuple_file(write(tmp_path, "b.txt", text))
        assert a.tuples == b.tuples and a.entity_names == b.entity_names

    def test_incidence_conservation(self, tmp_path):
        rng = np.random.default_rng(3)
        lines = [" ".join([f"r{rng.integers(4)}"] + [f"e{v}" for v in rng.integers(0, 30, size=rng.integers(2, 7))])
                 for _ in range(80)]
        hg = parse_tuple_file(write(tmp_path, "kb.txt", "\n".join(lines)))
        assert sum(t.arity for t in hg.tuples) == sum(len(v) for v in hg.incidence)


class TestIncidence:
    def test_example(self):
        inc = build_incidence([KnowledgeTuple(0, (0, 1)), KnowledgeTuple(1, (1, 2))], 4)
        assert inc[1] == [(0, 2), (1, 1)]
        assert inc[3] == []

    def test_validation(self):
        with pytest.raises(ValueError):
            KnowledgeHypergraph(3, 1, [KnowledgeTuple(0, (0,))])
        with pytest.raises(ValueError):
            KnowledgeHypergraph(3, 1, [KnowledgeTuple(0, (0, 5))])
        with pytest.raises(ValueError):
            KnowledgeHypergraph(3, 1, [KnowledgeTuple(2, (0, 1))])


class TestLabeled:
    def test_small_dataset(self, tmp_path):
        e = write(tmp_path, "h.txt", "0 1\n1 2 3\n2\n")
        f = write(tmp_path, "f.txt", "1 0\n0 1\n1 1\n0 0\n")
        lab = write(tmp_path, "l.txt", "0 0\n1 1\n2 1\n3 0\n")
        data = parse_labeled_hypergraph(e, f, lab)
        assert data.num_classes == 2
        assert data.graph.relation_count == 1
        assert [t.entities for t in data.graph.tuples] == [(0, 1), (1, 2, 3), (2,)]
        assert data.features.shape == (4, 2)

    def test_out_of_range_node(self, tmp_path):
        e = write(tmp_path, "h.txt", "0 7\n")
        f = write(tmp_path, "f.txt", "1 0\n0 1\n")
        lab = write(tmp_path, "l.txt", "0 0\n")
        with pytest.raises(ConsistencyError):
            parse_labeled_hypergraph(e, f, lab)

    def test_directory_loader_with_splits(self, tmp_path):
        write(tmp_path, "hypergraph.txt", "0 1\n2 3\n")
        write(tmp_path, "features.txt", "1 0\n1 0\n0 1\n0 1\n")
        write(tmp_path, "labels.txt", "0 0\n1 0\n2 1\n3 1\n")
        write(tmp_path, "train.idx", "0\n2\n")
        write(tmp_path, "valid.idx", "1\n")
        write(tmp_path, "test.idx", "3\n")
        data, split = load_classification_dir(tmp_path)
        assert split.train.tolist() == [0, 2] and split.test.tolist() == [3]
        assert data.labels.tolist() == [0, 0, 1, 1]


class TestExpansion:
    def test_roster(self):
        hg = KnowledgeHypergraph(3, 1, [KnowledgeTuple(0, (0, 1, 2))], ["Bucks", "Guard", "Jrue Holiday"], ["Roster"])
        exp = hyper_star_expand(hg)
        assert format_expansion(hg, exp) == ["Bucks 0 Roster-1", "Guard 0 Roster-2", "Jrue Holiday 0 Roster-3"]

    def test_empty(self):
        hg = KnowledgeHypergraph(2, 1, [])
        exp = hyper_star_expand(hg)
        assert len(exp) == 0 and reconstruct(exp) == []

    def test_positional_ids_injective(self):
        n = 6
        ids = {positional_relation(r, p, n) for r in range(5) for p in range(1, n + 1)}
        assert len(ids) == 30 and max(ids) < 5 * n

    def test_one_edge_per_slot(self):
        hg = KnowledgeHypergraph(4, 2, [KnowledgeTuple(0, (0, 1)), KnowledgeTuple(1, (1, 2, 3)), KnowledgeTuple(0, (1, 0))])
        exp = hyper_star_expand(hg)
        assert len(exp) == 7
        assert len({(t, p) for _, t, p in exp.edges.tolist()}) == 7


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_expansion_lossless(data):
    V = data.draw(st.integers(2, 20))
    R = data.draw(st.integers(1, 5))
    n_t = data.draw(st.integers(0, 50))
    tuples = [
        KnowledgeTuple(data.draw(st.integers(0, R - 1)),
                       tuple(data.draw(st.lists(st.integers(0, V - 1), min_size=2, max_size=6))))
        for _ in range(n_t)
    ]
    hg = KnowledgeHypergraph(V, R, tuples)
    assert reconstruct(hyper_star_expand(hg)) == tuples


class TestSplits:
    def test_ratios(self):
        s = make_splits(100, (0.2, 0.4, 0.4), np.random.default_rng(0))
        assert (len(s.train), len(s.valid), len(s.test)) == (20, 40, 40)
        assert not set(s.train) & set(s.test)

    def test_deterministic(self):
        a = make_splits(50, (0.8, 0.1, 0.1), np.random.default_rng(5))
        b = make_splits(50, (0.8, 0.1, 0.1), np.random.default_rng(5))
        assert all(np.array_equal(x, y) for x, y in zip((a.train, a.valid, a.test), (b.train, b.valid, b.test)))

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            make_splits(10, (0.8, 0.3, 0.1), np.random.default_rng(0))

    def test_inductive_count(self):
        assert inductive_mask(10, 0.4, np.random.default_rng(0)).sum() == 4

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.2, 1.5])
    def test_inductive_fraction_range(self, frac):
        with pytest.raises(ValueError):
            inductive_mask(10, frac, np.random.default_rng(0))

    def test_inductive_training_view(self):
        data = clustered_hypergraph(0)
        split = inductive_splits(data, 0.4, 0.2, np.random.default_rng(1))
        view = training_view(data.graph, split.unseen)
        assert all(not split.unseen[e] for t in view.tuples for e in t.entities)
        assert len(view.tuples) < len(data.graph.tuples)
        assert not split.unseen[split.train].any()
        assert split.unseen.sum() == 24


def test_link_prediction_dir(tmp_path):
    write(tmp_path, "train.txt", "r a b c\nr b c d\n")
    write(tmp_path, "valid.txt", "s a d\n")
    write(tmp_path, "test.txt", "r d a b\n")
    hg, split = load_link_prediction_dir(tmp_path)
    assert split.train.tolist() == [0, 1] and split.valid.tolist() == [2] and split.test.tolist() == [3]
    assert hg.entity_count == 4 and hg.relation_count == 2


def test_link_prediction_single_file(tmp_path):
    p = write(tmp_path, "kb.txt", "\n".join(f"r e{i} e{i + 1}" for i in range(20)))
    hg, split = load_link_prediction_dir(p, np.random.default_rng(0))
    assert len(split.train) + len(split.valid) + len(split.test) == 20
