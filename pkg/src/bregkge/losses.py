"""Loss functions on score vectors.

Every loss maps scores (logits) to a value and the gradient of that value
with respect to the scores; models turn the score gradient into parameter
gradients. Inputs may be a single score vector or a ``(batch, n_labels)``
matrix; values are returned per example.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, log_expit

SCE = "sce"
SCE_LS = "sce-ls"
SCE_BC = "sce-bc"
NS_UNI = "ns-uni"
NS_FREQ = "ns-freq"
SANS = "sans"
FAMILIES = (SCE, SCE_LS, SCE_BC, NS_UNI, NS_FREQ, SANS)
SCE_FAMILIES = (SCE, SCE_LS, SCE_BC)
NS_FAMILIES = (NS_UNI, NS_FREQ, SANS)

NOISE_SOURCE = {NS_UNI: "uniform", NS_FREQ: "unigram", SANS: "model-self", SCE_BC: "unigram"}


class LossSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    family: str = SCE
    nu: int = 1
    lam: float = 0.0
    alpha: float = 0.0
    mode: str = "sampled"
    # sce-bc only: bounds for the #x/#y example weight
    bc_clamp: tuple[float, float] = (1e-3, 1e3)
    # sans only: ramp alpha from 0 over this many epochs (0 = constant)
    alpha_warmup: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise LossSpecError(f"unknown loss family {self.family!r}")
        if self.mode not in ("sampled", "exact"):
            raise LossSpecError(f"mode must be 'sampled' or 'exact', got {self.mode!r}")
        if int(self.nu) != self.nu or self.nu < 1:
            raise LossSpecError(f"nu must be a positive integer, got {self.nu}")
        if not 0.0 <= self.lam <= 1.0:
            raise LossSpecError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.lam and self.family != SCE_LS:
            raise LossSpecError("lambda is only meaningful for sce-ls")
        if self.alpha < 0:
            raise LossSpecError("alpha must be nonnegative")
        if (self.alpha or self.alpha_warmup) and self.family != SANS:
            raise LossSpecError("alpha is only meaningful for sans")
        lo, hi = self.bc_clamp
        if not 0 < lo <= hi:
            raise LossSpecError("bc_clamp must satisfy 0 < low <= high")
        object.__setattr__(self, "bc_clamp", (float(lo), float(hi)))

    @property
    def noise_source(self) -> str | None:
        return NOISE_SOURCE.get(self.family)

    @property
    def is_sce(self) -> bool:
        return self.family in SCE_FAMILIES

    def alpha_at(self, epoch: int) -> float:
        if self.alpha_warmup <= 0:
            return self.alpha
        return self.alpha * min(1.0, epoch / self.alpha_warmup)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bc_clamp"] = list(self.bc_clamp)
        return d


@dataclass
class LossOut:
    value: np.ndarray
    score_grad: np.ndarray
    weight: np.ndarray | None = field(default=None)

    @property
    def total(self) -> float:
        return float(np.sum(self.value))


def _batch(scores, gold):
    s = np.asarray(scores, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    g = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    if len(g) != len(s):
        raise ValueError("one gold label per score row is required")
    return s, g, single


def _unbatch(out: LossOut, single: bool) -> LossOut:
    if single:
        out.value = float(out.value[0])
        out.score_grad = out.score_grad[0]
        if out.weight is not None:
            out.weight = float(out.weight[0])
    return out


def softmax(scores, axis: int = -1) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(scores, axis: int = -1) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    shifted = s - s.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def sce_loss(scores, gold, lam: float = 0.0) -> LossOut:
    """Cross entropy against ``(1 - lam) * onehot(gold) + lam / n_labels``."""
    s, g, single = _batch(scores, gold)
    n = s.shape[1]
    logp = log_softmax(s)
    rows = np.arange(len(s))
    target = np.full_like(s, lam / n)
    target[rows, g] += 1.0 - lam
    value = -np.sum(target * logp, axis=1)
    grad = np.exp(logp) - target
    return _unbatch(LossOut(value, grad), single)


def bc_weight(count_x, count_y, clamp=(1e-3, 1e3)):
    """Backward-correction weight ``#x / #y``, clamped."""
    count_x = np.asarray(count_x, dtype=float)
    count_y = np.asarray(count_y, dtype=float)
    if np.any(count_x <= 0) or np.any(count_y <= 0):
        raise LossSpecError("sce-bc needs positive counts for every query and label")
    return np.clip(count_x / count_y, *clamp)


def sce_bc_loss(scores, gold, count_x, count_y, clamp=(1e-3, 1e3)) -> LossOut:
    """SCE with each example scaled by ``#x / #y``."""
    s, g, single = _batch(scores, gold)
    w = np.broadcast_to(bc_weight(count_x, count_y, clamp), (len(s),)).copy()
    base = sce_loss(s, g)
    return _unbatch(LossOut(w * base.value, w[:, None] * base.score_grad, w), single)


def ns_loss_sampled(pos_scores, neg_scores, neg_weights=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``-log sig(f+) - sum_i w_i log sig(-f_i)`` over drawn negatives.

    Returns ``(value, d_value/d_pos, d_value/d_neg)``. ``neg_weights``
    defaults to 1 per negative and is treated as a constant.
    """
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    w = np.ones_like(neg) if neg_weights is None else np.asarray(neg_weights, dtype=float)
    value = -log_expit(pos) - np.sum(w * log_expit(-neg), axis=-1)
    return value, -expit(-pos), w * expit(neg)


def ns_loss_exact(scores, gold, noise, nu: int = 1) -> LossOut:
    """NS with the negative-sample sum replaced by its expectation.

    ``noise`` is ``p_n(.|x)``: one vector shared by all rows or one row each.
    """
    if nu < 1:
        raise LossSpecError("nu must be >= 1")
    s, g, single = _batch(scores, gold)
    pn = np.broadcast_to(np.asarray(noise, dtype=float), s.shape)
    rows = np.arange(len(s))
    pos = s[rows, g]
    value = -log_expit(pos) - nu * np.sum(pn * log_expit(-s), axis=1)
    grad = nu * pn * expit(s)
    grad[rows, g] -= expit(-pos)
    return _unbatch(LossOut(value, grad), single)


def ns_loss(scores, gold, negatives=None, noise=None, nu: int = 1, neg_weights=None) -> LossOut:
    """Negative-sampling loss on full score rows.

    With ``negatives`` (``(batch, nu)`` label indices) the sampled form is
    used and the gradient is scattered back onto the score rows; otherwise
    ``noise`` must be given and the exact expectation is taken.
    """
    if negatives is None:
        if noise is None:
            raise LossSpecError("exact-expectation NS needs a noise distribution")
        return ns_loss_exact(scores, gold, noise, nu)
    s, g, single = _batch(scores, gold)
    neg = np.atleast_2d(np.asarray(negatives, dtype=np.int64))
    if neg.shape[1] < 1:
        raise LossSpecError("at least one negative is required")
    rows = np.arange(len(s))
    value, dpos, dneg = ns_loss_sampled(s[rows, g], np.take_along_axis(s, neg, axis=1), neg_weights)
    grad = np.zeros_like(s)
    grad[rows, g] += dpos
    np.add.at(grad, (np.repeat(rows, neg.shape[1]), neg.ravel()), dneg.ravel())
    return _unbatch(LossOut(value, grad), single)


def sans_weights(neg_scores, alpha: float) -> np.ndarray:
    """Self-adversarial weights ``softmax(alpha * f)`` over drawn negatives."""
    if alpha < 0:
        raise LossSpecError("alpha must be nonnegative")
    return softmax(alpha * np.asarray(neg_scores, dtype=float))


def _sans_scaled_weights(neg_scores, alpha):
    # nu * softmax, computed as e / mean(e) so that alpha=0 gives exactly 1
    a = alpha * np.asarray(neg_scores, dtype=float)
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.mean(axis=-1, keepdims=True)


def sans_loss(scores, gold, negatives, alpha: float) -> LossOut:
    """SANS on drawn negatives: NS with ``nu * softmax(alpha f)`` weights.

    The weights carry no gradient. With ``alpha = 0`` this is the plain NS
    loss on the same negatives.
    """
    s, g, single = _batch(scores, gold)
    neg = np.atleast_2d(np.asarray(negatives, dtype=np.int64))
    w = _sans_scaled_weights(np.take_along_axis(s, neg, axis=1), alpha)
    out = ns_loss(s, g, negatives=neg, neg_weights=w)
    return _unbatch(out, single)


def sans_loss_exact(scores, gold, alpha: float, nu: int = 1) -> LossOut:
    """Exact-expectation SANS: noise is the detached ``softmax(alpha f)``."""
    s, g, single = _batch(scores, gold)
    return _unbatch(ns_loss_exact(s, g, softmax(alpha * s), nu), single)


def noise_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator keyed on ``(seed, *keys)``, e.g. ``(seed, epoch, batch)``."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def sample_noise(source: str, n_labels: int, k, rng: np.random.Generator,
                 unigram=None, scores=None, alpha: float = 1.0) -> np.ndarray:
    """Draw ``k`` i.i.d. labels (``k`` may be a shape tuple).

    ``source`` is ``uniform``, ``unigram`` (needs ``unigram``) or
    ``model-self`` (needs a score row; draws from ``softmax(alpha * scores)``).
    """
    size = (k,) if np.isscalar(k) else tuple(k)
    if min(size) < 1:
        raise LossSpecError("k must be >= 1")
    if source == "uniform":
        return rng.integers(0, n_labels, size=size)
    if source == "unigram":
        if unigram is None:
            raise LossSpecError("unigram noise needs label frequencies")
        return rng.choice(n_labels, size=size, p=np.asarray(unigram, dtype=float))
    if source == "model-self":
        if scores is None:
            raise LossSpecError("model-self noise needs scores")
        return rng.choice(n_labels, size=size, p=softmax(alpha * np.asarray(scores, dtype=float)))
    raise LossSpecError(f"unknown noise source {source!r}")


def compute_loss(spec: LossSpec, scores, gold, *, rng=None, unigram=None, bc=None,
                 epoch: int = 0) -> LossOut:
    """Dispatch one batch of rows to the loss named by ``spec``.

    ``unigram`` is ``p_d(y)`` (ns-freq noise); ``bc`` is a ``(count_x,
    count_y)`` pair of per-row arrays for sce-bc. Sampled NS families draw
    ``(batch, nu)`` negatives from ``rng``.
    """
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    n = s.shape[1]
    fam = spec.family
    if fam in (SCE, SCE_LS):
        return sce_loss(s, gold, spec.lam)
    if fam == SCE_BC:
        if bc is None:
            raise LossSpecError("sce-bc needs frequency counts")
        return sce_bc_loss(s, gold, bc[0], bc[1], spec.bc_clamp)
    alpha = spec.alpha_at(epoch)
    if spec.mode == "exact":
        if fam == NS_UNI:
            return ns_loss_exact(s, gold, np.full(n, 1.0 / n), spec.nu)
        if fam == NS_FREQ:
            return ns_loss_exact(s, gold, unigram, spec.nu)
        return sans_loss_exact(s, gold, alpha, spec.nu)
    if rng is None:
        raise LossSpecError("sampled NS needs a random generator")
    shape = (len(s), spec.nu)
    if fam == NS_FREQ:
        neg = sample_noise("unigram", n, shape, rng, unigram=unigram)
    else:
        neg = sample_noise("uniform", n, shape, rng)
    if fam == SANS:
        return sans_loss(s, gold, neg, alpha)
    return ns_loss(s, gold, negatives=neg)
