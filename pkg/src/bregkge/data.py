"""Triple files, vocabularies, reciprocal queries and empirical distributions."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

logger = logging.getLogger(__name__)

TAIL = 0  # (e, r, ?)
HEAD = 1  # (?, r, e)


class TripleParseError(ValueError):
    def __init__(self, path, lineno: int, line: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: expected 3 tab-separated fields, got {line!r}")


class VocabularyError(ValueError):
    """A name in an evaluation split is missing from the training vocabulary."""


@dataclass(frozen=True)
class Vocab:
    entities: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()
    entity_index: Mapping[str, int] = field(init=False, repr=False, compare=False)
    relation_index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entity_index", {e: i for i, e in enumerate(self.entities)})
        object.__setattr__(self, "relation_index", {r: i for i, r in enumerate(self.relations)})
        if len(self.entity_index) != len(self.entities) or len(self.relation_index) != len(self.relations):
            raise ValueError("vocabulary names must be unique")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)


@dataclass(frozen=True)
class TripleSet:
    """Id-indexed triples, one ``(head, rel, tail)`` row each, without duplicates."""

    triples: np.ndarray
    vocab: Vocab
    n_duplicates: int = 0

    def __post_init__(self):
        arr = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        arr.setflags(write=False)
        object.__setattr__(self, "triples", arr)

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        return (tuple(int(v) for v in row) for row in self.triples)

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    @classmethod
    def from_names(cls, rows: Iterable[tuple[str, str, str]], vocab: Vocab | None = None) -> "TripleSet":
        """Index string triples. With ``vocab`` given, unseen names raise."""
        frozen = vocab is not None
        ents = dict(vocab.entity_index) if frozen else {}
        rels = dict(vocab.relation_index) if frozen else {}

        def lookup(table, name, kind):
            if name not in table:
                if frozen:
                    raise VocabularyError(f"unknown {kind} {name!r}")
                table[name] = len(table)
            return table[name]

        seen = set()
        out = []
        dups = 0
        for h, r, t in rows:
            key = (lookup(ents, h, "entity"), lookup(rels, r, "relation"), lookup(ents, t, "entity"))
            if key in seen:
                dups += 1
                continue
            seen.add(key)
            out.append(key)
        if not frozen:
            vocab = Vocab(tuple(ents), tuple(rels))
        if dups:
            logger.warning("dropped %d duplicate triples", dups)
        return cls(np.array(out, dtype=np.int64).reshape(-1, 3), vocab, dups)


def _read_rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TripleParseError(path, lineno, line)
            yield parts[0], parts[1], parts[2]


def load_triples(path, vocab: Vocab | None = None) -> TripleSet:
    """Load a ``head<TAB>relation<TAB>tail`` file.

    Ids follow first appearance in the file unless ``vocab`` is passed, in
    which case the file is indexed against it (validation/test splits).
    """
    return TripleSet.from_names(_read_rows(path), vocab)


def load_splits(directory, names=("train", "valid", "test")) -> dict[str, TripleSet]:
    """Load ``train.txt`` first, then the other splits against its vocabulary."""
    directory = Path(directory)
    train = load_triples(directory / f"{names[0]}.txt")
    out = {names[0]: train}
    for name in names[1:]:
        out[name] = load_triples(directory / f"{name}.txt", train.vocab)
    return out


def load_shared(*paths) -> list[TripleSet]:
    """Load several files over one vocabulary built from all of them.

    Unlike :func:`load_splits`, held-out files may mention entities that
    never occur in the first file.
    """
    rows = [list(_read_rows(p)) for p in paths]
    ents, rels = {}, {}
    for chunk in rows:
        for h, r, t in chunk:
            ents.setdefault(h, len(ents))
            rels.setdefault(r, len(rels))
            ents.setdefault(t, len(ents))
    vocab = Vocab(tuple(ents), tuple(rels))
    return [TripleSet.from_names(chunk, vocab) for chunk in rows]


def write_triples(path, triples: TripleSet) -> None:
    ents, rels = triples.vocab.entities, triples.vocab.relations
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples.triples:
            fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


def export_vocab(directory, vocab: Vocab) -> None:
    """Write ``entities.tsv`` and ``relations.tsv`` as ``name<TAB>id``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for fname, names in (("entities.tsv", vocab.entities), ("relations.tsv", vocab.relations)):
        with open(directory / fname, "w", encoding="utf-8") as fh:
            for i, name in enumerate(names):
                fh.write(f"{name}\t{i}\n")


@dataclass(frozen=True)
class Query:
    direction: int
    anchor: int
    rel: int

    def __post_init__(self):
        if self.direction not in (TAIL, HEAD):
            raise ValueError(f"direction must be TAIL ({TAIL}) or HEAD ({HEAD})")

    def relation_id(self, n_relations: int) -> int:
        """Relation index in the doubled (forward + reciprocal) table."""
        return self.rel + self.direction * n_relations


@dataclass(frozen=True)
class QuerySet:
    """(query, answer) pairs as parallel arrays.

    ``direction``, ``anchor``, ``rel`` describe the query and ``answer`` the
    entity to predict. Head-predict queries are answered by the reciprocal
    relation ``rel + n_relations``.
    """

    direction: np.ndarray
    anchor: np.ndarray
    rel: np.ndarray
    answer: np.ndarray
    n_entities: int
    n_relations: int

    def __len__(self) -> int:
        return len(self.answer)

    @property
    def relation_ids(self) -> np.ndarray:
        return self.rel + self.direction * self.n_relations

    @property
    def query_index(self) -> np.ndarray:
        """Flat query id ``relation_id * n_entities + anchor`` for each pair."""
        return self.relation_ids * self.n_entities + self.anchor

    @property
    def n_queries(self) -> int:
        """Size of the query space (all anchors times doubled relations)."""
        return 2 * self.n_relations * self.n_entities

    def query(self, i: int) -> Query:
        return Query(int(self.direction[i]), int(self.anchor[i]), int(self.rel[i]))

    def pairs(self) -> Iterator[tuple[Query, int]]:
        for i in range(len(self)):
            yield self.query(i), int(self.answer[i])

    def subset(self, idx) -> "QuerySet":
        return QuerySet(self.direction[idx], self.anchor[idx], self.rel[idx], self.answer[idx],
                        self.n_entities, self.n_relations)


def to_queries(triples: TripleSet) -> QuerySet:
    """Expand each triple into a tail-predict and a head-predict pair."""
    t = triples.triples
    n = len(t)
    return QuerySet(
        direction=np.repeat(np.array([TAIL, HEAD], dtype=np.int64)[None, :], n, axis=0).ravel(),
        anchor=np.stack([t[:, 0], t[:, 2]], axis=1).ravel(),
        rel=np.repeat(t[:, 1], 2),
        answer=np.stack([t[:, 2], t[:, 0]], axis=1).ravel(),
        n_entities=triples.n_entities,
        n_relations=triples.n_relations,
    )


class CondDist(Mapping):
    """Sparse conditional distribution ``p(y|x)`` over ``support_size`` labels.

    Maps a query key to ``(labels, probs)``; only observed labels are stored.
    """

    def __init__(self, support_size: int, table: Mapping | None = None):
        self.support_size = int(support_size)
        self._table = {}
        for key, (labels, probs) in (table or {}).items():
            labels = np.asarray(labels, dtype=np.int64)
            probs = np.asarray(probs, dtype=float)
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ValueError(f"row {key!r} is not a probability vector")
            self._table[key] = (labels, probs)

    @classmethod
    def from_dense(cls, rows: Mapping | np.ndarray) -> "CondDist":
        if isinstance(rows, np.ndarray):
            rows = dict(enumerate(rows))
        size = len(next(iter(rows.values()))) if rows else 0
        table = {}
        for key, vec in rows.items():
            vec = np.asarray(vec, dtype=float)
            nz = np.flatnonzero(vec)
            table[key] = (nz, vec[nz])
        return cls(size, table)

    def __getitem__(self, key):
        return self._table[key]

    def __iter__(self):
        return iter(self._table)

    def __len__(self) -> int:
        return len(self._table)

    def dense(self, key) -> np.ndarray:
        out = np.zeros(self.support_size)
        labels, probs = self._table[key]
        out[labels] = probs
        return out

    def to_dense(self, keys=None) -> np.ndarray:
        keys = list(self._table) if keys is None else list(keys)
        return np.stack([self.dense(k) for k in keys]) if keys else np.zeros((0, self.support_size))


def empirical_conditional(pairs: QuerySet) -> CondDist:
    """``p_d(y|x) = count(x, y) / count(x)`` keyed by flat query id."""
    if len(pairs) == 0:
        raise ValueError("empty query set")
    q = pairs.query_index
    keys, inverse = np.unique(q, return_inverse=True)
    table = {}
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    for k, key in enumerate(keys):
        answers = pairs.answer[order[bounds[k]:bounds[k + 1]]]
        labels, counts = np.unique(answers, return_counts=True)
        table[int(key)] = (labels, counts / counts.sum())
    return CondDist(pairs.n_entities, table)


@dataclass(frozen=True)
class FreqTable:
    query_counts: Mapping[int, int]
    label_counts: np.ndarray
    total: int

    def unigram(self) -> np.ndarray:
        """``p_d(y) = #y / sum(#y)``."""
        return self.label_counts / self.label_counts.sum()

    def count_x(self, query_key: int) -> int:
        return self.query_counts.get(int(query_key), 0)

    def count_y(self, label: int) -> int:
        return int(self.label_counts[label])


def frequency_table(pairs: QuerySet) -> FreqTable:
    if len(pairs) == 0:
        raise ValueError("empty query set")
    counts = Counter(pairs.query_index.tolist())
    labels = np.bincount(pairs.answer, minlength=pairs.n_entities)
    return FreqTable(dict(counts), labels, len(pairs))
