"""Objective distributions of each loss and a brute-force optimizer to certify them.

A *world* is a strictly positive joint ``p_d(x, y)`` over a small query set
``X`` and label set ``Y``, stored as an ``(|X|, |Y|)`` matrix. The tabular
model gives every ``(x, y)`` its own free score, so minimizing the exact
expectation of a loss over those scores lands on that loss's objective
distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from . import bregman
from .losses import NS_FREQ, NS_UNI, SANS, SCE, SCE_BC, SCE_LS, log_softmax, softmax

ANALYTIC_FAMILIES = (NS_UNI, NS_FREQ, SCE, SCE_BC, SCE_LS)


class OracleConvergenceError(RuntimeError):
    def __init__(self, grad_norm: float, n_steps: int):
        self.grad_norm = grad_norm
        self.n_steps = n_steps
        super().__init__(f"no convergence after {n_steps} steps (max |grad| = {grad_norm:.3e})")


def _positive_noise(p_n):
    p_n = np.asarray(p_n, dtype=float)
    if np.any(p_n <= 0):
        raise bregman.DomainError("noise distribution must be strictly positive")
    return p_n


def objective_ns(p_d, p_n):
    """``p_d(y) / p_n(y)``, renormalized over labels (last axis).

    Labels with ``p_d = 0`` contribute nothing to the normalizer.
    """
    p_d = np.asarray(p_d, dtype=float)
    ratio = p_d / _positive_noise(p_n)
    return ratio / ratio.sum(axis=-1, keepdims=True)


def transport_coeff(p_d, p_n, y=None):
    """``T = p_n(y) * sum_i p_d(i) / p_n(i)``; all labels when ``y`` is None."""
    p_d = np.asarray(p_d, dtype=float)
    p_n = _positive_noise(p_n)
    t = p_n * np.sum(p_d / p_n, axis=-1, keepdims=True)
    return t if y is None else t[..., y]


def objective_sans_mixture(p_d, lam: float):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    p_d = np.asarray(p_d, dtype=float)
    return (1 - lam) * p_d + lam / p_d.shape[-1]


def sans_fixed_point_step(p_d, p_prev):
    """One application of the NS objective map with the previous model as noise."""
    return objective_ns(p_d, p_prev)


@dataclass
class FixedPointTrace:
    iterates: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def period(self, tol: float = 1e-12, max_period: int = 4) -> int | None:
        """Smallest ``k`` with ``iterate[t + k] == iterate[t]`` over the tail."""
        its = self.iterates
        for k in range(1, max_period + 1):
            if len(its) <= 2 * k:
                break
            if all(np.max(np.abs(its[t] - its[t + k])) < tol for t in range(len(its) - 2 * k, len(its) - k)):
                return k
        return None


def sans_trace(p_d, p_start=None, n_steps: int = 10) -> FixedPointTrace:
    """Iterate :func:`sans_fixed_point_step` from ``p_start`` (uniform by default)."""
    p_d = np.asarray(p_d, dtype=float)
    p = np.full_like(p_d, 1.0 / p_d.shape[-1]) if p_start is None else np.asarray(p_start, dtype=float)
    trace = FixedPointTrace([p])
    for _ in range(n_steps):
        nxt = sans_fixed_point_step(p_d, p)
        trace.iterates.append(nxt)
        trace.residuals.append(float(np.max(np.abs(nxt - p))))
        p = nxt
    return trace


def pmi_from_optimum(joint):
    """``log p(x, y) / (p(x) p(y))`` for a strictly positive joint."""
    joint = np.asarray(joint, dtype=float)
    if np.any(joint <= 0):
        raise bregman.DomainError("joint must be strictly positive")
    if abs(joint.sum() - 1) > 1e-9:
        raise ValueError("joint must sum to 1")
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    return np.log(joint / (px * py))


@dataclass(frozen=True)
class ObjectiveSpec:
    family: str
    lam: float | None = None
    noise: np.ndarray | None = field(default=None, compare=False)
    nu: int = 1

    def __post_init__(self):
        if self.family not in ANALYTIC_FAMILIES + (SANS,):
            raise ValueError(f"unknown family {self.family!r}")
        if (self.lam is not None) != (self.family in (SCE_LS, SANS)):
            raise ValueError("lambda is required for sce-ls/sans and forbidden otherwise")
        if (self.noise is not None) != (self.family in (NS_FREQ, SCE_BC)):
            raise ValueError("noise is required for ns-freq/sce-bc and forbidden otherwise")
        if self.nu < 1:
            raise ValueError("nu must be >= 1")

    def noise_matrix(self, shape) -> np.ndarray:
        if self.noise is None:
            return np.full(shape, 1.0 / shape[1])
        return np.broadcast_to(_positive_noise(self.noise), shape)


def conditional(joint) -> tuple[np.ndarray, np.ndarray]:
    """Split a joint into ``(p_d(y|x), p_d(x))``."""
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1)
    return joint / px[:, None], px


def objective(spec: ObjectiveSpec, joint) -> np.ndarray:
    """Closed-form objective distribution of ``spec`` on a world."""
    cond, _ = conditional(joint)
    if spec.family in (SCE, NS_UNI):
        return cond
    if spec.family in (NS_FREQ, SCE_BC):
        return objective_ns(cond, spec.noise_matrix(cond.shape))
    return objective_sans_mixture(cond, spec.lam)


def exact_loss(spec: ObjectiveSpec, joint, scores) -> tuple[float, np.ndarray]:
    """Exact-expectation loss of a tabular score matrix and its gradient."""
    joint = np.asarray(joint, dtype=float)
    f = np.asarray(scores, dtype=float)
    cond, px = conditional(joint)
    fam = spec.family
    if fam in (NS_UNI, NS_FREQ):
        pn = spec.noise_matrix(f.shape)
        neg = spec.nu * px[:, None] * pn
        value = -np.sum(joint * log_expit(f)) - np.sum(neg * log_expit(-f))
        grad = -joint * expit(-f) + neg * expit(f)
        return float(value), grad
    if fam == SANS:
        raise ValueError("sans has no fixed exact loss; use sans_trace")
    if fam == SCE:
        weights = joint
    elif fam == SCE_LS:
        weights = px[:, None] * objective_sans_mixture(cond, spec.lam)
    else:
        weights = joint / transport_coeff(cond, spec.noise_matrix(f.shape))
    value = -np.sum(weights * log_softmax(f))
    grad = weights.sum(axis=1, keepdims=True) * softmax(f) - weights
    return float(value), grad


@dataclass
class OracleResult:
    probs: np.ndarray
    scores: np.ndarray
    loss: float
    n_steps: int
    grad_norm: float


def brute_force_optimum(spec: ObjectiveSpec, joint, seed: int = 0, tol: float = 1e-8,
                        max_steps: int = 1_000_000, lr: float = 1.0) -> OracleResult:
    """Minimize :func:`exact_loss` over free tabular scores.

    Full-batch gradient descent with each query row scaled by ``1 / p_d(x)``
    (the rows are decoupled, so this is a per-block step size). A step that
    raises the loss is rejected and the step size halved. Stops when the max
    absolute gradient drops below ``tol``.
    """
    joint = np.asarray(joint, dtype=float)
    if joint.shape[0] > 16 or joint.shape[1] > 16:
        raise ValueError("brute-force worlds are limited to 16 x 16")
    rng = np.random.default_rng(seed)
    f = rng.normal(scale=0.1, size=joint.shape)
    px = joint.sum(axis=1, keepdims=True)
    value, grad = exact_loss(spec, joint, f)
    step = 0
    while step < max_steps:
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            break
        cand = f - lr * grad / px
        cval, cgrad = exact_loss(spec, joint, cand)
        step += 1
        if cval > value + 4 * np.finfo(float).eps * abs(value):
            lr *= 0.5
            if lr < 1e-12:
                raise OracleConvergenceError(gnorm, step)
            continue
        f, value, grad = cand, cval, cgrad
    else:
        raise OracleConvergenceError(float(np.max(np.abs(grad))), step)
    return OracleResult(softmax(f), f, value, step, float(np.max(np.abs(grad))))


def ns_bregman_identity(joint, p_n, scores, nu: int = 1) -> tuple[float, float]:
    """Exact NS loss and the same quantity written as an expected divergence.

    The divergence uses the ``ns-binary`` generator with target
    ``f(u) = nu p_n(y|x) / p_d(y|x)`` and prediction ``g(u) = exp(-score)``.
    """
    joint = np.asarray(joint, dtype=float)
    if np.any(joint <= 0):
        raise bregman.DomainError("joint must be strictly positive")
    cond, _ = conditional(joint)
    pn = np.broadcast_to(_positive_noise(p_n), joint.shape)
    spec = ObjectiveSpec(NS_FREQ, noise=pn, nu=nu)
    loss, _ = exact_loss(spec, joint, scores)
    target = nu * pn / cond
    g = np.exp(-np.asarray(scores, dtype=float))
    btilde = bregman.expected_divergence_tilde(bregman.NS_BINARY, target, g, joint)
    return loss, btilde


def optimum_loss(family: str, px, cond, nu: int = 1, lam: float = 0.0, noise=None) -> float:
    """Infimum of the exact-expectation loss over a fully expressive model.

    ``px`` are query weights and ``cond`` the rows ``p_d(y|x)`` (zeros
    allowed). NS terms with ``p_d(y|x) = 0`` vanish as the score goes to
    minus infinity.
    """
    px = np.asarray(px, dtype=float)
    cond = np.asarray(cond, dtype=float)
    if family in (SCE, SCE_LS):
        target = objective_sans_mixture(cond, lam) if family == SCE_LS else cond
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(target > 0, target * np.log(target), 0.0)
        return float(-np.sum(px[:, None] * ent))
    if family in (NS_UNI, NS_FREQ):
        pn = np.full_like(cond, 1.0 / cond.shape[1]) if noise is None else np.broadcast_to(noise, cond.shape)
        m = cond > 0
        g = nu * pn[m] / cond[m]
        terms = np.zeros_like(cond)
        terms[m] = cond[m] * np.log1p(g) + nu * pn[m] * np.log1p(1.0 / g)
        return float(np.sum(px[:, None] * terms))
    raise ValueError(f"no closed-form optimum for {family!r}")


def random_world(rng: np.random.Generator, max_x: int = 8, max_y: int = 8, floor: float = 0.1):
    """Random strictly positive joint and noise table.

    Rows of ``p_d(y|x)`` and ``p_n(y|x)`` mix a Dirichlet(1) draw with
    ``floor`` of the uniform so that no entry is vanishingly small.
    """
    nx = int(rng.integers(1, max_x + 1))
    ny = int(rng.integers(2, max_y + 1))
    u = np.full(ny, 1.0 / ny)
    cond = (1 - floor) * rng.dirichlet(np.ones(ny), size=nx) + floor * u
    noise = (1 - floor) * rng.dirichlet(np.ones(ny), size=nx) + floor * u
    px = rng.dirichlet(np.ones(nx))
    px = (1 - floor) * px + floor / nx
    return px[:, None] * cond, noise


def certify(n_worlds: int = 20, seed: int = 0, families=ANALYTIC_FAMILIES, nu: int = 1,
            max_x: int = 8, max_y: int = 8) -> list[dict]:
    """Check every analytic family against its closed form on random worlds."""
    rng = np.random.default_rng(seed)
    worlds = [random_world(rng, max_x, max_y) for _ in range(n_worlds)]
    lams = rng.uniform(0.0, 1.0, size=n_worlds)
    rows = []
    for family in families:
        devs, steps, gnorms = [], [], []
        for i, (joint, noise) in enumerate(worlds):
            spec = ObjectiveSpec(
                family,
                lam=float(lams[i]) if family == SCE_LS else None,
                noise=noise if family in (NS_FREQ, SCE_BC) else None,
                nu=nu,
            )
            res = brute_force_optimum(spec, joint, seed=seed + i)
            devs.append(float(np.max(np.abs(res.probs - objective(spec, joint)))))
            steps.append(res.n_steps)
            gnorms.append(res.grad_norm)
        rows.append({
            "family": family,
            "max_abs_dev": max(devs),
            "iterations": max(steps),
            "grad_norm": max(gnorms),
            "worlds": n_worlds,
        })
    return rows


def sans_boundary_report(p_d, n_steps: int = 10) -> dict:
    """Fixed-point checks that stand in for the (implicit) SANS objective."""
    p_d = np.asarray(p_d, dtype=float)
    u = np.full_like(p_d, 1.0 / p_d.shape[-1])
    trace = sans_trace(p_d, u, n_steps)
    return {
        "family": SANS,
        "uniform_to_pd": float(np.max(np.abs(sans_fixed_point_step(p_d, u) - p_d))),
        "pd_to_uniform": float(np.max(np.abs(sans_fixed_point_step(p_d, p_d) - u))),
        "period": trace.period(),
    }
