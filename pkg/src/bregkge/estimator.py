"""scikit-learn style wrapper around training and ranking.

``X`` is an integer array of ``(head, relation, tail)`` rows. Queries for
:meth:`KGEmbeddingEstimator.predict` are ``(anchor, relation)`` rows, with an
optional third column giving the direction (0 = predict tail, 1 = predict
head).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from . import models
from .data import TAIL, QuerySet, TripleSet, to_queries
from .evaluation import FilterIndex, evaluate
from .losses import LossSpec, softmax
from .models import ModelSpec
from .synthetic import synthetic_vocab
from .trainer import TrainConfig, train


def _check_ids(arr, n, what):
    if arr.size and arr.min() < 0:
        raise ValueError(f"{what} ids must be nonnegative")
    if n is not None and arr.size and arr.max() >= n:
        raise ValueError(f"{what} id {int(arr.max())} out of range for {n} {what}s")


def check_triples(X, n_entities: int | None = None, n_relations: int | None = None) -> np.ndarray:
    """Validate an ``(n, 3)`` integer triple array and return it as int64."""
    X = check_array(X, dtype=None, ensure_2d=True)
    if X.shape[1] != 3:
        raise ValueError(f"triples need 3 columns, got {X.shape[1]}")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.mod(X, 1) == 0):
            raise ValueError("triple ids must be integers")
    X = X.astype(np.int64)
    _check_ids(X[:, [0, 2]], n_entities, "entity")
    _check_ids(X[:, 1], n_relations, "relation")
    return X


def check_queries(X, n_entities: int, n_relations: int) -> QuerySet:
    X = check_array(X, dtype=np.int64, ensure_2d=True)
    if X.shape[1] not in (2, 3):
        raise ValueError("queries need (anchor, relation[, direction]) columns")
    direction = X[:, 2] if X.shape[1] == 3 else np.full(len(X), TAIL, dtype=np.int64)
    if not np.all((direction == 0) | (direction == 1)):
        raise ValueError("direction must be 0 (tail) or 1 (head)")
    _check_ids(X[:, 0], n_entities, "entity")
    _check_ids(X[:, 1], n_relations, "relation")
    return QuerySet(direction, X[:, 0], X[:, 1], np.zeros(len(X), dtype=np.int64), n_entities, n_relations)


class KGEmbeddingEstimator(BaseEstimator):
    """Link predictor trained with any of the supported model/loss pairs.

    Hyperparameters mirror the run-config keys. ``n_entities`` and
    ``n_relations`` default to one past the largest id seen in ``fit``.
    """

    def __init__(self, model="distmult", dim=32, loss="sce", nu=1, lam=0.0, alpha=0.0,
                 loss_mode="sampled", optimizer="adam", lr=0.01, batch_size=256, max_epochs=100,
                 eval_every=5, patience=10, decay=1.0, init="xavier-normal", seed=0,
                 n_entities=None, n_relations=None):
        self.model = model
        self.dim = dim
        self.loss = loss
        self.nu = nu
        self.lam = lam
        self.alpha = alpha
        self.loss_mode = loss_mode
        self.optimizer = optimizer
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.eval_every = eval_every
        self.patience = patience
        self.decay = decay
        self.init = init
        self.seed = seed
        self.n_entities = n_entities
        self.n_relations = n_relations

    def _config(self) -> TrainConfig:
        return TrainConfig(
            model=ModelSpec(family=self.model, dim=self.dim, init=self.init, seed=self.seed),
            loss=LossSpec(family=self.loss, nu=self.nu, lam=self.lam, alpha=self.alpha, mode=self.loss_mode),
            optimizer=self.optimizer, lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
            eval_every=self.eval_every, patience=self.patience, decay=self.decay,
        )

    def _triples(self, X) -> TripleSet:
        X = check_triples(X, self.n_entities_, self.n_relations_)
        return TripleSet(X, self.vocab_)

    def fit(self, X, y=None, X_valid=None):
        """Train on triples ``X``; ``X_valid`` enables early stopping on dev MRR."""
        X = check_triples(X, self.n_entities, self.n_relations)
        ids = [X[:, [0, 2]]] + ([check_triples(X_valid)[:, [0, 2]]] if X_valid is not None else [])
        rel_ids = [X[:, 1]] + ([check_triples(X_valid)[:, 1]] if X_valid is not None else [])
        self.n_entities_ = self.n_entities or int(max(a.max() for a in ids)) + 1
        self.n_relations_ = self.n_relations or int(max(a.max() for a in rel_ids)) + 1
        self.vocab_ = synthetic_vocab(self.n_entities_, self.n_relations_)
        train_set = self._triples(X)
        dev = to_queries(self._triples(X_valid)) if X_valid is not None else None
        splits = [train_set] + ([self._triples(X_valid)] if X_valid is not None else [])
        self.filter_ = FilterIndex.from_triples(*splits)
        self.report_, self.params_ = train(self._config(), to_queries(train_set), dev, self.filter_)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Scores of every entity for each query row, shape ``(n, n_entities)``."""
        check_is_fitted(self, "params_")
        q = check_queries(X, self.n_entities_, self.n_relations_)
        return models.score_batch(self.params_, q.anchor, q.relation_ids)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        """Highest-scoring entity per query."""
        return np.argmax(self.decision_function(X), axis=1)

    def transform(self, X) -> np.ndarray:
        """Entity embedding rows for the entity ids in ``X``."""
        check_is_fitted(self, "params_")
        if "entity" not in self.params_.tables:
            raise ValueError(f"{self.model} has no entity embeddings")
        ids = check_array(np.asarray(X).reshape(-1, 1), dtype=np.int64).ravel()
        _check_ids(ids, self.n_entities_, "entity")
        return self.params_.tables["entity"][ids].copy()

    def score(self, X, y=None) -> float:
        """Filtered MRR over both query directions of triples ``X``."""
        check_is_fitted(self, "params_")
        queries = to_queries(self._triples(X))
        return evaluate(self.params_, queries, self.filter_.union(FilterIndex(queries))).mrr


__all__ = ["KGEmbeddingEstimator", "check_queries", "check_triples"]
