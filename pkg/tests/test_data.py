import logging

import numpy as np
import pytest

from bregkge.data import (HEAD, TAIL, QuerySet, TripleParseError, TripleSet, VocabularyError,
                          empirical_conditional, export_vocab, frequency_table, load_shared,
                          load_splits, load_triples, to_queries, write_triples)
from conftest import write_tsv


def _pairs(answers, anchor=0, rel=0, n_entities=4):
    n = len(answers)
    return QuerySet(np.full(n, TAIL), np.full(n, anchor), np.full(n, rel), np.asarray(answers),
                    n_entities, 1)


def test_load_first_appearance_order(tmp_path):
    p = write_tsv(tmp_path / "t.txt", [("b", "r1", "a"), ("a", "r0", "c"), ("c", "r1", "b")])
    ts = load_triples(p)
    assert ts.vocab.entities == ("b", "a", "c")
    assert ts.vocab.relations == ("r1", "r0")
    assert ts.triples.tolist() == [[0, 0, 1], [1, 1, 2], [2, 0, 0]]


def test_empty_file(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    ts = load_triples(p)
    assert (len(ts), ts.n_entities, ts.n_relations) == (0, 0, 0)


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("a\tr\tb\n\nx\ty\n")
    with pytest.raises(TripleParseError) as err:
        load_triples(p)
    assert err.value.lineno == 3
    assert "3" in str(err.value)


def test_duplicates_dropped_with_warning(tmp_path, caplog):
    p = write_tsv(tmp_path / "d.txt", [("a", "r", "b"), ("a", "r", "b"), ("b", "r", "a")])
    with caplog.at_level(logging.WARNING):
        ts = load_triples(p)
    assert len(ts) == 2 and ts.n_duplicates == 1
    assert "duplicate" in caplog.text


def test_round_trip_and_stable_ids(tmp_path, toy_dir):
    ts = load_triples(toy_dir / "train.txt")
    out = tmp_path / "copy.txt"
    write_triples(out, ts)
    again = load_triples(out)
    assert again.vocab == ts.vocab
    np.testing.assert_array_equal(again.triples, ts.triples)


def test_splits_use_train_vocab(tmp_path):
    write_tsv(tmp_path / "train.txt", [("a", "r", "b")])
    write_tsv(tmp_path / "valid.txt", [("b", "r", "a")])
    write_tsv(tmp_path / "test.txt", [("a", "r", "zzz")])
    with pytest.raises(VocabularyError, match="zzz"):
        load_splits(tmp_path)


def test_load_shared_extends_vocab(tmp_path):
    a = write_tsv(tmp_path / "a.txt", [("a", "r", "b")])
    b = write_tsv(tmp_path / "b.txt", [("a", "s", "c")])
    ta, tb = load_shared(a, b)
    assert ta.vocab is tb.vocab and ta.n_entities == 3 and ta.n_relations == 2


def test_export_vocab(tmp_path):
    ts = TripleSet.from_names([("x", "r", "y")])
    export_vocab(tmp_path, ts.vocab)
    assert (tmp_path / "entities.tsv").read_text() == "x\t0\ny\t1\n"
    assert (tmp_path / "relations.tsv").read_text() == "r\t0\n"


def test_to_queries_expansion():
    ts = TripleSet.from_names([("a", "r", "b")])
    q = to_queries(ts)
    pairs = [(qq.direction, qq.anchor, qq.rel, ans) for qq, ans in q.pairs()]
    assert pairs == [(TAIL, 0, 0, 1), (HEAD, 1, 0, 0)]


def test_self_loop_gives_two_pairs():
    q = to_queries(TripleSet.from_names([("a", "r", "a")]))
    assert len(q) == 2 and q.answer.tolist() == [0, 0]
    # tail- and head-predict keys differ even though the ids coincide
    assert len(set(q.query_index.tolist())) == 2


def test_pair_count_is_twice_triples(toy_dir):
    ts = load_triples(toy_dir / "train.txt")
    assert len(to_queries(ts)) == 2 * len(ts)


def test_empirical_conditional_ratio():
    cond = empirical_conditional(_pairs([1, 1, 1, 2]))
    (key,) = list(cond)
    labels, probs = cond[key]
    assert dict(zip(labels.tolist(), probs.tolist())) == {1: 0.75, 2: 0.25}


def test_empirical_conditional_one_hot_and_absent():
    cond = empirical_conditional(_pairs([3]))
    (key,) = list(cond)
    assert cond[key][1].tolist() == [1.0]
    assert key + 1 not in cond


def test_empirical_conditional_normalized(toy_dir):
    cond = empirical_conditional(to_queries(load_triples(toy_dir / "train.txt")))
    for key in cond:
        assert abs(cond[key][1].sum() - 1.0) < 1e-12


def test_frequency_table_counts():
    freq = frequency_table(_pairs([1, 1, 2]))
    assert freq.label_counts[1] == 2 and freq.label_counts[2] == 1
    np.testing.assert_allclose(freq.unigram()[[1, 2]], [2 / 3, 1 / 3])
    assert freq.label_counts.sum() == freq.total == 3


def test_frequency_table_single_pair():
    u = frequency_table(_pairs([2])).unigram()
    assert u.tolist() == [0.0, 0.0, 1.0, 0.0]
