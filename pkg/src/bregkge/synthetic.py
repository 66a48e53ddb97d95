"""Seeded synthetic knowledge graphs for smoke tests and directional experiments.

Entities are split into clusters. Each relation maps a head cluster to a
target cluster and draws tails there with Zipf-skewed popularity, so queries
have several plausible answers and label frequencies are uneven.

With ``symmetric=True`` every relation is symmetric and both directions of
an edge land in the same split, so a symmetric scorer such as DistMult can
in principle fit the training conditionals exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TripleSet, Vocab


@dataclass(frozen=True)
class SyntheticSpec:
    n_entities: int = 200
    n_relations: int = 5
    n_clusters: int = 10
    tails_per_head: int = 3
    zipf: float = 1.0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    symmetric: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_entities < self.n_clusters or self.n_clusters < 1:
            raise ValueError("need at least one entity per cluster")
        if self.n_relations < 1 or self.tails_per_head < 1:
            raise ValueError("n_relations and tails_per_head must be >= 1")
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError("split fractions must be nonnegative and sum to 1")


def synthetic_vocab(n_entities: int, n_relations: int) -> Vocab:
    return Vocab(tuple(f"e{i}" for i in range(n_entities)), tuple(f"r{i}" for i in range(n_relations)))


def synthetic_graph(spec: SyntheticSpec | None = None, **overrides) -> dict[str, TripleSet]:
    """Generate ``{"train", "valid", "test"}`` splits over a shared vocabulary.

    Every valid/test triple uses entities that occur in train.
    """
    spec = spec or SyntheticSpec()
    if overrides:
        spec = SyntheticSpec(**{**spec.__dict__, **overrides})
    rng = np.random.default_rng(spec.seed)
    E, R, C = spec.n_entities, spec.n_relations, spec.n_clusters
    cluster = rng.permutation(np.arange(E) % C)
    members = [np.flatnonzero(cluster == c) for c in range(C)]
    popularity = 1.0 / np.arange(1, E + 1) ** spec.zipf
    popularity = popularity[rng.permutation(E)]
    if spec.symmetric:
        target = np.stack([_involution(rng, C) for _ in range(R)])
    else:
        target = rng.integers(0, C, size=(R, C))

    edges = set()
    for r in range(R):
        for h in range(E):
            pool = members[target[r, cluster[h]]]
            w = popularity[pool] / popularity[pool].sum()
            k = min(spec.tails_per_head, len(pool))
            for t in rng.choice(pool, size=k, replace=False, p=w):
                t = int(t)
                edges.add((min(h, t), r, max(h, t)) if spec.symmetric else (h, r, t))
    units = sorted(edges)
    units = [units[i] for i in rng.permutation(len(units))]

    def expand(chunk):
        rows = []
        for h, r, t in chunk:
            rows.append((h, r, t))
            if spec.symmetric and h != t:
                rows.append((t, r, h))
        return np.array(rows, dtype=np.int64).reshape(-1, 3)

    n_train = int(round(spec.split[0] * len(units)))
    n_valid = int(round(spec.split[1] * len(units)))
    train = expand(units[:n_train])
    rest_units = units[n_train:]
    seen = np.zeros(E, dtype=bool)
    seen[train[:, 0]] = seen[train[:, 2]] = True
    # held-out triples must stay answerable from the training vocabulary
    ok = [seen[h] and seen[t] for h, _, t in rest_units]
    train = np.concatenate([train, expand([u for u, k in zip(rest_units, ok) if not k])])
    kept = [u for u, k in zip(rest_units, ok) if k]
    vocab = synthetic_vocab(E, R)
    return {
        "train": TripleSet(train, vocab),
        "valid": TripleSet(expand(kept[:n_valid]), vocab),
        "test": TripleSet(expand(kept[n_valid:]), vocab),
    }


def _involution(rng, n):
    """Random pairing of ``0..n-1``; an odd one out maps to itself."""
    perm = rng.permutation(n)
    out = np.arange(n)
    for a, b in zip(perm[0::2], perm[1::2]):
        out[a], out[b] = b, a
    return out


__all__ = ["SyntheticSpec", "synthetic_graph", "synthetic_vocab"]
