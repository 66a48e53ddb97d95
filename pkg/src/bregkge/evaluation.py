"""Filtered link-prediction ranking and the train/test conditional KL statistic."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .data import HEAD, TAIL, QuerySet, TripleSet, to_queries
from .models import ParamStore, score_batch


class FilterIndex:
    """Known answers per flat query id, pooled over the given splits."""

    def __init__(self, *splits: QuerySet):
        known = defaultdict(set)
        for qs in splits:
            for q, a in zip(qs.query_index.tolist(), qs.answer.tolist()):
                known[q].add(a)
        self._known = {q: np.fromiter(sorted(a), dtype=np.int64) for q, a in known.items()}

    @classmethod
    def from_triples(cls, *splits: TripleSet) -> "FilterIndex":
        return cls(*(to_queries(t) for t in splits))

    def union(self, *others: "FilterIndex") -> "FilterIndex":
        out = FilterIndex()
        out._known = dict(self._known)
        for other in others:
            for q, known in other._known.items():
                out._known[q] = np.union1d(out._known[q], known) if q in out._known else known
        return out

    def known(self, query_index: int) -> np.ndarray:
        return self._known.get(int(query_index), np.empty(0, dtype=np.int64))

    def __contains__(self, item) -> bool:
        q, a = item
        return int(a) in set(self.known(q).tolist())


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def rank_from_scores(scores, gold: int, filtered=()) -> int:
    """Rank of ``gold`` after dropping ``filtered`` candidates (gold is kept).

    Ties count half, i.e. the mean rank over tied orderings, rounded half up.
    """
    s = np.asarray(scores, dtype=float).copy()
    drop = np.asarray([e for e in np.asarray(filtered, dtype=np.int64).tolist() if e != gold], dtype=np.int64)
    target = s[gold]
    keep = np.ones(len(s), dtype=bool)
    keep[drop] = False
    keep[gold] = False
    higher = np.count_nonzero(s[keep] > target)
    ties = np.count_nonzero(s[keep] == target)
    return int(_round_half_up(1 + higher + ties / 2))


def rank_filtered(params: ParamStore, query, gold: int, filt: FilterIndex | None) -> int:
    rel = query.relation_id(params.n_relations)
    scores = score_batch(params, [query.anchor], [rel])[0]
    known = filt.known(rel * params.n_entities + query.anchor) if filt is not None else ()
    return rank_from_scores(scores, gold, known)


def rank_batch(scores, gold, known_lists) -> np.ndarray:
    """Vectorized :func:`rank_from_scores` for a ``(B, n)`` score matrix."""
    s = np.asarray(scores, dtype=float)
    gold = np.asarray(gold, dtype=np.int64)
    rows = np.arange(len(s))
    target = s[rows, gold][:, None]
    keep = np.ones_like(s, dtype=bool)
    for i, known in enumerate(known_lists):
        keep[i, known] = False
    keep[rows, gold] = False
    higher = np.count_nonzero((s > target) & keep, axis=1)
    ties = np.count_nonzero((s == target) & keep, axis=1)
    return _round_half_up(1 + higher + ties / 2)


def rank_queries(params: ParamStore, queries: QuerySet, filt: FilterIndex | None = None,
                 batch_size: int = 256) -> np.ndarray:
    """Filtered ranks for every (query, answer) pair, both directions pooled."""
    ranks = np.empty(len(queries), dtype=np.int64)
    rel = queries.relation_ids
    qidx = queries.query_index
    for start in range(0, len(queries), batch_size):
        sl = slice(start, start + batch_size)
        scores = score_batch(params, queries.anchor[sl], rel[sl])
        known = [filt.known(q) if filt is not None else () for q in qidx[sl]]
        ranks[sl] = rank_batch(scores, queries.answer[sl], known)
    return ranks


@dataclass(frozen=True)
class RankReport:
    ranks: tuple
    mrr: float
    hits1: float
    hits3: float
    hits10: float

    @property
    def n(self) -> int:
        return len(self.ranks)

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3,
                "hits10": self.hits10, "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def metrics(ranks) -> RankReport:
    r = np.asarray(ranks, dtype=float)
    if r.size == 0:
        raise ValueError("cannot compute metrics of an empty rank list")
    if np.any(r < 1):
        raise ValueError("ranks must be positive")
    return RankReport(
        tuple(int(x) for x in r),
        float(np.mean(1.0 / r)),
        float(np.mean(r <= 1)),
        float(np.mean(r <= 3)),
        float(np.mean(r <= 10)),
    )


def evaluate(params: ParamStore, queries: QuerySet, filt: FilterIndex | None = None) -> RankReport:
    return metrics(rank_queries(params, queries, filt))


# -- dataset KL ----------------------------------------------------------------

def _additive_estimates(triples: np.ndarray, direction: int):
    """Frequency tables behind ``p(y | r, e) = p(y | r) + p(y | e)``."""
    if direction == TAIL:
        anchor, answer = triples[:, 0], triples[:, 2]
    else:
        anchor, answer = triples[:, 2], triples[:, 0]
    by_rel = defaultdict(Counter)
    by_anchor = defaultdict(Counter)
    for a, r, y in zip(anchor.tolist(), triples[:, 1].tolist(), answer.tolist()):
        by_rel[r][y] += 1
        by_anchor[a][y] += 1
    queries = sorted(set(zip(triples[:, 1].tolist(), anchor.tolist())))
    return by_rel, by_anchor, queries


def _estimate(by_rel, by_anchor, rel, anchor, n, normalize):
    v = np.zeros(n)
    for table, key in ((by_rel, rel), (by_anchor, anchor)):
        c = table.get(key)
        if c:
            total = sum(c.values())
            labels = np.fromiter(c.keys(), dtype=np.int64)
            v[labels] += np.fromiter(c.values(), dtype=float) / total
    if normalize and v.sum() > 0:
        v /= v.sum()
    return v


def kg_kl_divergence(train: TripleSet, test: TripleSet, eps: float = 1e-9, normalize: bool = True,
                     return_parts: bool = False):
    """Mean ``KL(P || Q)`` of answer distributions over test queries.

    ``P`` is estimated on ``train`` and ``Q`` on ``test``, each with the
    additive frequency estimator ``p(y | r, e) = p(y | r) + p(y | e)`` and
    renormalized. ``Q`` gets ``eps`` added to every label before
    renormalizing. Tail- and head-predict queries are pooled.
    """
    if len(train) == 0 or len(test) == 0:
        raise ValueError("both splits must be nonempty")
    if train.n_entities != test.n_entities and train.vocab is not test.vocab:
        raise ValueError("splits must share one vocabulary")
    n = max(train.n_entities, test.n_entities)
    kls = {TAIL: [], HEAD: []}
    for direction in (TAIL, HEAD):
        p_rel, p_anchor, _ = _additive_estimates(train.triples, direction)
        q_rel, q_anchor, queries = _additive_estimates(test.triples, direction)
        for rel, anchor in queries:
            p = _estimate(p_rel, p_anchor, rel, anchor, n, normalize)
            if not p.any():
                continue
            q = _estimate(q_rel, q_anchor, rel, anchor, n, normalize) + eps
            if normalize:
                q /= q.sum()
            m = p > 0
            kls[direction].append(float(np.sum(p[m] * np.log(p[m] / q[m]))))
    pooled = kls[TAIL] + kls[HEAD]
    value = math.fsum(pooled) / len(pooled)
    if return_parts:
        return value, {"tail": float(np.mean(kls[TAIL])), "head": float(np.mean(kls[HEAD])),
                       "n_queries": len(pooled)}
    return value


__all__ = [
    "FilterIndex", "RankReport", "evaluate", "kg_kl_divergence", "metrics", "rank_batch",
    "rank_filtered", "rank_from_scores", "rank_queries",
]
