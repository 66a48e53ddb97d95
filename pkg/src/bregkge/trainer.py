"""Training loops, optimizers, early stopping and warm starts."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import models
from .data import QuerySet, empirical_conditional, frequency_table
from .evaluation import FilterIndex, evaluate
from .losses import SCE_BC, LossSpec, compute_loss, noise_rng
from .models import ModelSpec, ParamStore

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adagrad", "adam")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
ADAGRAD_EPS = 1e-10


class TrainingDivergedError(RuntimeError):
    pass


class WarmStartError(ValueError):
    def __init__(self, fields: dict):
        self.fields = fields
        detail = ", ".join(f"{k}: checkpoint={a!r} config={b!r}" for k, (a, b) in fields.items())
        super().__init__(f"warm-start checkpoint does not match config ({detail})")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    batch_size: int = 256
    optimizer: str = "adam"
    lr: float = 0.01
    decay: float = 1.0
    patience: int = 10
    max_epochs: int = 100
    eval_every: int = 5
    reg_p: int = 0
    reg_entity: float = 0.0
    reg_relation: float = 0.0
    dropout_entity: float = 0.0
    dropout_relation: float = 0.0
    full_batch: bool = False
    backtracking: bool = False
    warm_start: str | None = None

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.reg_p not in (0, 1, 2, 3):
            raise ValueError("reg_p must be 0 (off), 1, 2 or 3")
        for p in (self.dropout_entity, self.dropout_relation):
            if not 0 <= p < 1:
                raise ValueError("dropout rates must lie in [0, 1)")
        if self.backtracking and (self.optimizer != "sgd" or not self.full_batch):
            raise ValueError("backtracking requires optimizer=sgd and full_batch=true")

    @property
    def seed(self) -> int:
        return self.model.seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["loss"] = self.loss.to_dict()
        return d


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    dev_mrr: list = field(default_factory=list)
    best_epoch: int = 0
    best_mrr: float | None = None
    stopped_early: bool = False
    steps: int = 0
    wall_time: float = 0.0
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dev_mrr"] = [[int(e), float(m)] for e, m in self.dev_mrr]
        return d


# -- optimizers ----------------------------------------------------------------

def optimizer_step(kind: str, params: dict, grads: dict, state: dict, lr: float) -> None:
    """In-place update of every table in ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in table {name!r}")
    if kind == "sgd":
        for name, g in grads.items():
            params[name] -= lr * g
        return
    if kind == "adagrad":
        for name, g in grads.items():
            acc = state.setdefault(name, np.zeros_like(g))
            acc += g * g
            params[name] -= lr * g / (np.sqrt(acc) + ADAGRAD_EPS)
        return
    if kind == "adam":
        b1, b2 = ADAM_BETAS
        t = state["t"] = state.get("t", 0) + 1
        for name, g in grads.items():
            m = state.setdefault(("m", name), np.zeros_like(g))
            v = state.setdefault(("v", name), np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            params[name] -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        return
    raise ValueError(f"unknown optimizer {kind!r}")


# -- batch objective -------------------------------------------------------------

@dataclass
class _Corpus:
    pairs: QuerySet
    unigram: np.ndarray
    count_x: np.ndarray | None
    count_y: np.ndarray | None


def _corpus(pairs: QuerySet, loss: LossSpec) -> _Corpus:
    freq = frequency_table(pairs)
    cx = cy = None
    if loss.family == SCE_BC:
        cx = np.array([freq.count_x(q) for q in pairs.query_index.tolist()], dtype=float)
        cy = freq.label_counts[pairs.answer].astype(float)
    return _Corpus(pairs, freq.unigram(), cx, cy)


def _dropout_masks(rng, config: TrainConfig, params: ParamStore, n):
    if params.spec.family == "tabular" or not (config.dropout_entity or config.dropout_relation):
        return None
    masks = []
    for p, name in ((config.dropout_entity, "entity"), (config.dropout_relation, "relation")):
        width = params.tables[name].shape[1]
        keep = rng.random((n, width)) >= p
        masks.append(keep / (1.0 - p))
    return tuple(masks)


def _regularize(config: TrainConfig, params: ParamStore, grads: dict | None, idx) -> float:
    if not config.reg_p or params.spec.family == "tabular":
        return 0.0
    p = config.reg_p
    total = 0.0
    for name, weight, rows in (("entity", config.reg_entity, idx[0]), ("relation", config.reg_relation, idx[1])):
        if not weight:
            continue
        rows = np.unique(rows)
        theta = params.tables[name][rows]
        total += weight * float(np.sum(np.abs(theta) ** p))
        if grads is not None:
            grads[name][rows] += weight * p * np.abs(theta) ** (p - 1) * np.sign(theta)
    return total


def batch_objective(config: TrainConfig, params: ParamStore, corpus: _Corpus, idx, *, epoch=0,
                    batch=0, train=True, with_grad=True):
    """Mean loss over the pairs ``idx`` and (optionally) its parameter gradient."""
    pairs = corpus.pairs
    anchors = pairs.anchor[idx]
    rels = pairs.relation_ids[idx]
    gold = pairs.answer[idx]
    rng = noise_rng(config.seed, epoch, batch)
    masks = _dropout_masks(np.random.default_rng([config.seed, epoch, batch, 1]), config, params,
                           len(idx)) if train else None
    scores = models.score_batch(params, anchors, rels, masks)
    bc = None
    if corpus.count_x is not None:
        bc = (corpus.count_x[idx], corpus.count_y[idx])
    out = compute_loss(config.loss, scores, gold, rng=rng, unigram=corpus.unigram, bc=bc, epoch=epoch)
    value = float(np.mean(out.value))
    grads = params.zeros_like() if with_grad else None
    if with_grad:
        models.grad_accumulate(params, anchors, rels, out.score_grad / len(idx), grads, masks)
    value += _regularize(config, params, grads, (np.concatenate([anchors, gold]), rels))
    return value, grads


def exact_training_loss(params: ParamStore, loss: LossSpec, pairs: QuerySet, batch_size: int = 512) -> float:
    """Mean exact-expectation loss over all pairs (no sampling, no dropout)."""
    spec = replace(loss, mode="exact")
    config = TrainConfig(model=params.spec, loss=spec)
    corpus = _corpus(pairs, spec)
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        idx = np.arange(start, min(start + batch_size, len(pairs)))
        value, _ = batch_objective(config, params, corpus, idx, train=False, with_grad=False)
        total += value * len(idx)
    return total / len(pairs)


# -- training --------------------------------------------------------------------

def warm_start(config: TrainConfig, checkpoint, n_entities: int | None = None,
               n_relations: int | None = None) -> ParamStore:
    """Load ``checkpoint`` after checking it matches the configured model."""
    if isinstance(checkpoint, ParamStore):
        params = checkpoint.copy()
    else:
        params = models.load_checkpoint(checkpoint)
    diff = {}
    for key in ("family", "dim"):
        a, b = getattr(params.spec, key), getattr(config.model, key)
        if a != b:
            diff[key] = (a, b)
    for key, want in (("n_entities", n_entities), ("n_relations", n_relations)):
        if want is not None and getattr(params, key) != want:
            diff[key] = (getattr(params, key), want)
    if diff:
        raise WarmStartError(diff)
    return params


def train(config: TrainConfig, data: QuerySet, dev: QuerySet | None = None, filt: FilterIndex | None = None,
          init: ParamStore | None = None, progress=None) -> tuple[TrainReport, ParamStore]:
    """Train, evaluating dev MRR every ``eval_every`` epochs.

    Returns the report and the parameters of the best dev epoch (the last
    epoch when there is no dev set). ``progress`` is called as
    ``progress(epoch, loss, dev_mrr_or_None)`` after every epoch.
    """
    t0 = time.perf_counter()
    if len(data) == 0:
        raise ValueError("no training pairs")
    if init is not None:
        params = warm_start(config, init, data.n_entities, data.n_relations)
    elif config.warm_start:
        params = warm_start(config, config.warm_start, data.n_entities, data.n_relations)
    else:
        params = models.init_params(config.model, data.n_entities, data.n_relations)
    if dev is not None and len(dev) and filt is None:
        filt = FilterIndex(data, dev)
    corpus = _corpus(data, config.loss)
    state: dict = {}
    lr = config.lr
    report = TrainReport()
    best = params.copy()
    bad_evals = 0
    n = len(data)

    if dev is not None and len(dev):
        mrr = evaluate(params, dev, filt).mrr
        report.dev_mrr.append((0, mrr))
        report.best_mrr = mrr

    for epoch in range(1, config.max_epochs + 1):
        if config.full_batch:
            batches = [np.arange(n)]
        else:
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
            batches = [order[i:i + config.batch_size] for i in range(0, n, config.batch_size)]
        epoch_loss = 0.0
        for b, idx in enumerate(batches):
            value, grads = batch_objective(config, params, corpus, idx, epoch=epoch, batch=b)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}")
            if config.backtracking:
                lr = _backtrack(config, params, corpus, idx, value, grads, lr, epoch)
            else:
                optimizer_step(config.optimizer, params.tables, grads, state, lr)
            report.steps += 1
            epoch_loss += value * len(idx)
        epoch_loss /= n
        report.epoch_losses.append(epoch_loss)
        if not params.is_finite():
            raise TrainingDivergedError(f"non-finite parameters after epoch {epoch}")

        mrr = None
        if dev is not None and len(dev) and epoch % config.eval_every == 0:
            mrr = evaluate(params, dev, filt).mrr
            report.dev_mrr.append((epoch, mrr))
            if mrr > report.best_mrr:
                report.best_mrr, report.best_epoch = mrr, epoch
                best = params.copy()
                bad_evals = 0
            else:
                bad_evals += 1
                lr *= config.decay
                if bad_evals >= config.patience:
                    report.stopped_early = True
        if progress is not None:
            progress(epoch, epoch_loss, mrr)
        if report.stopped_early:
            break

    if dev is None or not len(dev):
        best = params
        report.best_epoch = len(report.epoch_losses)
    report.wall_time = time.perf_counter() - t0
    return report, best


def _backtrack(config, params, corpus, idx, value, grads, lr, epoch):
    """Gradient step that halves ``lr`` until the loss does not increase."""
    while True:
        trial = params.copy()
        optimizer_step("sgd", trial.tables, grads, {}, lr)
        new, _ = batch_objective(config, trial, corpus, idx, epoch=epoch, with_grad=False)
        if new <= value or lr < 1e-12:
            params.tables.update(trial.tables)
            return lr
        lr *= 0.5


def empirical_targets(pairs: QuerySet):
    """Query ids, ``p_d(x)`` and dense ``p_d(y|x)`` rows of a training set."""
    cond = empirical_conditional(pairs)
    keys = sorted(cond)
    freq = frequency_table(pairs)
    px = np.array([freq.count_x(k) for k in keys], dtype=float) / freq.total
    return keys, px, cond.to_dense(keys)


@dataclass
class PipelineReport:
    pretrain: TrainReport
    finetune: TrainReport
    cold: TrainReport | None = None

    @property
    def gain(self) -> float | None:
        """Fine-tuned minus cold-start best dev MRR."""
        if self.cold is None or self.finetune.best_mrr is None or self.cold.best_mrr is None:
            return None
        return self.finetune.best_mrr - self.cold.best_mrr

    def to_dict(self) -> dict:
        return {"pretrain": self.pretrain.to_dict(), "finetune": self.finetune.to_dict(),
                "cold": None if self.cold is None else self.cold.to_dict(), "gain": self.gain}


def pretrain_pipeline(pre: TrainConfig, fine: TrainConfig, data: QuerySet, dev: QuerySet,
                      filt: FilterIndex | None = None, cold_start: bool = True,
                      progress=None) -> tuple[PipelineReport, ParamStore]:
    """Train with ``pre``, warm-start ``fine`` from its best parameters.

    With ``cold_start`` the ``fine`` config is also trained from a fresh
    initialization as the baseline.
    """
    if filt is None:
        filt = FilterIndex(data, dev)
    pre_report, pre_params = train(pre, data, dev, filt, progress=progress)
    fine_report, params = train(fine, data, dev, filt, init=pre_params, progress=progress)
    cold = train(fine, data, dev, filt, progress=progress)[0] if cold_start else None
    return PipelineReport(pre_report, fine_report, cold), params
