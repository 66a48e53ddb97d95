"""Score functions with hand-written gradients.

Every model answers a query ``(anchor, relation_id)`` with one score per
candidate entity. Relation ids run over ``2 * n_relations`` rows: row
``r + n_relations`` is the reciprocal of ``r`` and answers head-predict
queries, while entity rows are shared by both directions.

Score functions (``h`` anchor, ``r`` relation, ``t`` candidate):

* tabular: one free parameter per (query, candidate)
* transe: ``-||h + r - t||_2``
* distmult: ``sum_i h_i r_i t_i``
* complex: ``Re(sum_i h_i r_i conj(t_i))``
* rescal: ``h^T M_r t`` with a full ``dim x dim`` matrix per relation
* rotate: ``-sum_i |h_i exp(j phi_i) - t_i|``; relations are stored as phases
  so every rotation has modulus exactly 1
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

FAMILIES = ("tabular", "transe", "distmult", "complex", "rescal", "rotate")
INITS = ("xavier-normal", "xavier-uniform", "normal", "uniform")

_TINY = 1e-12


class ModelSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str = "distmult"
    dim: int = 32
    init: str = "xavier-normal"
    # xavier gain, normal std, or uniform half-width depending on ``init``
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelSpecError(f"unknown model family {self.family!r}")
        if self.init not in INITS:
            raise ModelSpecError(f"unknown init scheme {self.init!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ModelSpecError(f"dim must be a positive integer, got {self.dim}")
        if self.init_scale <= 0:
            raise ModelSpecError("init_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ParamStore:
    spec: ModelSpec
    n_entities: int
    n_relations: int
    tables: dict = field(default_factory=dict)

    def copy(self) -> "ParamStore":
        return ParamStore(self.spec, self.n_entities, self.n_relations,
                          {k: v.copy() for k, v in self.tables.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tables.items()}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tables.values())

    def equals(self, other: "ParamStore") -> bool:
        return (self.spec == other.spec and self.n_entities == other.n_entities
                and self.n_relations == other.n_relations
                and self.tables.keys() == other.tables.keys()
                and all(np.array_equal(self.tables[k], other.tables[k]) for k in self.tables))


def _table_shapes(spec: ModelSpec, n_entities: int, n_relations: int) -> dict:
    d, r2 = spec.dim, 2 * n_relations
    if spec.family == "tabular":
        return {"scores": (r2 * n_entities, n_entities)}
    if spec.family in ("complex", "rotate"):
        ent = (n_entities, 2 * d)
        rel = (r2, d) if spec.family == "rotate" else (r2, 2 * d)
        return {"entity": ent, "relation": rel}
    if spec.family == "rescal":
        return {"entity": (n_entities, d), "relation": (r2, d * d)}
    return {"entity": (n_entities, d), "relation": (r2, d)}


def _draw(rng, spec: ModelSpec, shape):
    if spec.init == "normal":
        return rng.normal(0.0, spec.init_scale, size=shape)
    if spec.init == "uniform":
        return rng.uniform(-spec.init_scale, spec.init_scale, size=shape)
    fan_out, fan_in = shape
    if spec.init == "xavier-uniform":
        bound = spec.init_scale * np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)
    return rng.normal(0.0, spec.init_scale * np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def xavier_uniform_bound(fan_in: int, fan_out: int, gain: float = 1.0) -> float:
    return gain * float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(spec: ModelSpec, n_entities: int, n_relations: int) -> ParamStore:
    """Seeded parameter tables; rotate phases are uniform in [-pi, pi]."""
    rng = np.random.default_rng(spec.seed)
    tables = {}
    for name, shape in _table_shapes(spec, n_entities, n_relations).items():
        if spec.family == "rotate" and name == "relation":
            tables[name] = rng.uniform(-np.pi, np.pi, size=shape)
        else:
            tables[name] = _draw(rng, spec, shape)
    return ParamStore(spec, n_entities, n_relations, tables)


# -- per-family kernels ------------------------------------------------------
# ``scores(h, r, E)`` -> (B, n_cand); ``backward(h, r, E, W)`` -> (gh, gr, gE)
# where W = d loss / d scores has the same shape as the scores.

def _split(x):
    k = x.shape[-1] // 2
    return x[..., :k], x[..., k:]


class _TransE:
    @staticmethod
    def _dist(u, E):
        sq = (u * u).sum(1)[:, None] - 2.0 * u @ E.T + (E * E).sum(1)[None, :]
        return np.sqrt(np.maximum(sq, 0.0))

    def scores(self, h, r, E):
        return -self._dist(h + r, E)

    def backward(self, h, r, E, W):
        u = h + r
        n = self._dist(u, E)
        A = np.where(n > _TINY, W / np.maximum(n, _TINY), 0.0)
        gu = A @ E - A.sum(1)[:, None] * u
        gE = A.T @ u - A.sum(0)[:, None] * E
        return gu, gu.copy(), gE


class _DistMult:
    def scores(self, h, r, E):
        return (h * r) @ E.T

    def backward(self, h, r, E, W):
        gu = W @ E
        return gu * r, gu * h, W.T @ (h * r)


class _ComplEx:
    @staticmethod
    def _rotate(h, r):
        hre, him = _split(h)
        rre, rim = _split(r)
        return np.concatenate([hre * rre - him * rim, hre * rim + him * rre], axis=1)

    def scores(self, h, r, E):
        return self._rotate(h, r) @ E.T

    def backward(self, h, r, E, W):
        ga, gb = _split(W @ E)
        hre, him = _split(h)
        rre, rim = _split(r)
        gh = np.concatenate([ga * rre + gb * rim, -ga * rim + gb * rre], axis=1)
        gr = np.concatenate([ga * hre + gb * him, -ga * him + gb * hre], axis=1)
        return gh, gr, W.T @ self._rotate(h, r)


class _Rescal:
    @staticmethod
    def _mats(r):
        d = int(round(np.sqrt(r.shape[1])))
        return r.reshape(len(r), d, d)

    def scores(self, h, r, E):
        return np.einsum("bi,bij->bj", h, self._mats(r)) @ E.T

    def backward(self, h, r, E, W):
        M = self._mats(r)
        u = np.einsum("bi,bij->bj", h, M)
        gu = W @ E
        gh = np.einsum("bj,bij->bi", gu, M)
        gr = np.einsum("bi,bj->bij", h, gu).reshape(len(h), -1)
        return gh, gr, W.T @ u


class _RotatE:
    chunk = 64

    @staticmethod
    def _rot(h, phase):
        hre, him = _split(h)
        c, s = np.cos(phase), np.sin(phase)
        return hre * c - him * s, hre * s + him * c

    def scores(self, h, r, E):
        ure, uim = self._rot(h, r)
        tre, tim = _split(E)
        out = np.empty((len(h), len(E)))
        for i in range(0, len(h), self.chunk):
            sl = slice(i, i + self.chunk)
            dre = ure[sl, None, :] - tre[None]
            dim = uim[sl, None, :] - tim[None]
            out[sl] = -np.sqrt(dre * dre + dim * dim).sum(-1)
        return out

    def backward(self, h, r, E, W):
        ure, uim = self._rot(h, r)
        tre, tim = _split(E)
        gre = np.empty_like(ure)
        gim = np.empty_like(uim)
        gtre = np.zeros_like(tre)
        gtim = np.zeros_like(tim)
        for i in range(0, len(h), self.chunk):
            sl = slice(i, i + self.chunk)
            dre = ure[sl, None, :] - tre[None]
            dim = uim[sl, None, :] - tim[None]
            m = np.sqrt(dre * dre + dim * dim)
            A = np.where(m > _TINY, W[sl, :, None] / np.maximum(m, _TINY), 0.0)
            # d(-|d|)/d u = -d/|d| ; d(-|d|)/d t = +d/|d|
            gre[sl] = -(A * dre).sum(1)
            gim[sl] = -(A * dim).sum(1)
            gtre += (A * dre).sum(0)
            gtim += (A * dim).sum(0)
        c, s = np.cos(r), np.sin(r)
        gh = np.concatenate([gre * c + gim * s, -gre * s + gim * c], axis=1)
        gr = -gre * uim + gim * ure
        return gh, gr, np.concatenate([gtre, gtim], axis=1)


_KERNELS = {
    "transe": _TransE(),
    "distmult": _DistMult(),
    "complex": _ComplEx(),
    "rescal": _Rescal(),
    "rotate": _RotatE(),
}


def relation_modulus(params: ParamStore) -> np.ndarray:
    """Modulus of every rotate relation entry (identically 1)."""
    phase = params.tables["relation"]
    return np.abs(np.exp(1j * phase))


def _check_ids(params: ParamStore, anchors, rels):
    if np.any(anchors < 0) or np.any(anchors >= params.n_entities):
        raise IndexError("anchor entity id out of range")
    if np.any(rels < 0) or np.any(rels >= 2 * params.n_relations):
        raise IndexError("relation id out of range")


def _gather(params: ParamStore, anchors, rels, masks=None):
    h = params.tables["entity"][anchors]
    r = params.tables["relation"][rels]
    if masks is not None:
        h = h * masks[0]
        r = r * masks[1]
    return h, r


def score_batch(params: ParamStore, anchors, rels, masks=None) -> np.ndarray:
    """Scores of every entity for each query, shape ``(B, n_entities)``.

    ``masks`` optionally scales the gathered anchor and relation rows
    (dropout); it is ignored by the tabular model.
    """
    anchors = np.atleast_1d(np.asarray(anchors, dtype=np.int64))
    rels = np.atleast_1d(np.asarray(rels, dtype=np.int64))
    _check_ids(params, anchors, rels)
    if params.spec.family == "tabular":
        return params.tables["scores"][rels * params.n_entities + anchors].copy()
    h, r = _gather(params, anchors, rels, masks)
    return _KERNELS[params.spec.family].scores(h, r, params.tables["entity"])


def score_all(params: ParamStore, query, n_relations: int | None = None) -> np.ndarray:
    """Scores of every entity for a single :class:`~bregkge.data.Query`."""
    rel = query.relation_id(params.n_relations if n_relations is None else n_relations)
    return score_batch(params, [query.anchor], [rel])[0]


def grad_accumulate(params: ParamStore, anchors, rels, weights, into: dict, masks=None) -> None:
    """Add the gradient of ``sum_b sum_y weights[b, y] * score[b, y]`` into ``into``."""
    anchors = np.atleast_1d(np.asarray(anchors, dtype=np.int64))
    rels = np.atleast_1d(np.asarray(rels, dtype=np.int64))
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    if W.shape != (len(anchors), params.n_entities):
        raise ValueError(f"weights shape {W.shape} does not match ({len(anchors)}, {params.n_entities})")
    _check_ids(params, anchors, rels)
    if params.spec.family == "tabular":
        np.add.at(into["scores"], rels * params.n_entities + anchors, W)
        return
    h, r = _gather(params, anchors, rels, masks)
    gh, gr, gE = _KERNELS[params.spec.family].backward(h, r, params.tables["entity"], W)
    if masks is not None:
        gh = gh * masks[0]
        gr = gr * masks[1]
    into["entity"] += gE
    np.add.at(into["entity"], anchors, gh)
    np.add.at(into["relation"], rels, gr)


# -- checkpoints ---------------------------------------------------------------

MAGIC = b"BREGKGE1"


def save_checkpoint(path, params: ParamStore) -> None:
    """Write ``MAGIC``, a length-prefixed JSON header, then raw ``<f8`` tables."""
    header = {
        "family": params.spec.family,
        "dim": params.spec.dim,
        "n_entities": params.n_entities,
        "n_relations": params.n_relations,
        "seed": params.spec.seed,
        "spec": params.spec.to_dict(),
        "tables": [[name, list(arr.shape)] for name, arr in params.tables.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in params.tables.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        tables = {}
        for name, shape in header["tables"]:
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated table {name!r}")
            tables[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(float)
    spec = ModelSpec(**header["spec"])
    return ParamStore(spec, header["n_entities"], header["n_relations"], tables)
