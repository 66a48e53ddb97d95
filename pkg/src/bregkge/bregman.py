"""Bregman generators, divergences and the curves/bounds derived from them.

Three generator kinds are supported:

``sce-entropy``
    negative entropy ``sum_i z_i log z_i`` on probability vectors; induces SCE.
``sce-binary``
    the two-point expansion ``z log z + (1 - z) log(1 - z)`` of the same
    generator, used for divergence curves against a scalar target.
``ns-binary``
    ``z log z - (1 + z) log(1 + z)`` on positive scalars; induces NS.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

SCE_ENTROPY = "sce-entropy"
SCE_BINARY = "sce-binary"
NS_BINARY = "ns-binary"
KINDS = (SCE_ENTROPY, SCE_BINARY, NS_BINARY)

EPS = 1e-15


class DomainError(ValueError):
    pass


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"unknown generator kind {kind!r}; expected one of {KINDS}")


def _prob(z):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(~np.isfinite(z)):
        raise DomainError("probabilities must be finite and nonnegative")
    return np.clip(z, EPS, None)


def _positive(z):
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0) or np.any(~np.isfinite(z)):
        raise DomainError("ns-binary generator needs finite z > 0")
    return z


def _unit_interval(z):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(z > 1):
        raise DomainError("sce-binary generator needs z in [0, 1]")
    return np.clip(z, EPS, 1 - EPS)


def psi(kind: str, z):
    """Generator value. ``sce-entropy`` reduces over the last axis."""
    _check_kind(kind)
    if kind == SCE_ENTROPY:
        z = _prob(z)
        return np.sum(z * np.log(z), axis=-1)
    if kind == SCE_BINARY:
        z = _unit_interval(z)
        return z * np.log(z) + (1 - z) * np.log1p(-z)
    z = _positive(z)
    return z * np.log(z) - (1 + z) * np.log1p(z)


def grad_psi(kind: str, z):
    _check_kind(kind)
    if kind == SCE_ENTROPY:
        return np.log(_prob(z)) + 1.0
    if kind == SCE_BINARY:
        z = _unit_interval(z)
        return np.log(z) - np.log1p(-z)
    z = _positive(z)
    return np.log(z) - np.log1p(z)


def pointwise_divergence(kind: str, f, g):
    """``d(f, g) = psi(f) - psi(g) - grad_psi(g) . (f - g)``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {g.shape}")
    lin = grad_psi(kind, g) * (f - g)
    if kind == SCE_ENTROPY:
        lin = lin.sum(axis=-1)
    return psi(kind, f) - psi(kind, g) - lin


def expected_divergence_tilde(kind: str, f, g, weights) -> float:
    """Expected divergence with the ``g``-independent ``psi(f)`` term dropped.

    ``f``, ``g`` and ``weights`` are ``(n_queries, n_labels)`` arrays;
    ``weights`` holds the joint ``p_d(x, y)``. For ``sce-entropy`` the rows of
    ``f``/``g`` are distributions and each query is weighted by ``p_d(x)``.
    Adding ``sum psi(f) p_d`` recovers the full expected divergence.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not (f.shape == g.shape == w.shape):
        raise ValueError(f"shape mismatch: f{f.shape} g{g.shape} weights{w.shape}")
    grad = grad_psi(kind, g)
    if kind == SCE_ENTROPY:
        inner = -psi(kind, g) + np.sum(grad * g, axis=-1) - np.sum(grad * f, axis=-1)
        return float(np.sum(inner * w.sum(axis=-1)))
    inner = -psi(kind, g) + grad * g - grad * f
    return float(np.sum(inner * w))


def expected_divergence(kind: str, f, g, weights) -> float:
    """Full expected divergence ``sum d(f, g) p_d``."""
    w = np.asarray(weights, dtype=float)
    d = pointwise_divergence(kind, f, g)
    if kind == SCE_ENTROPY:
        return float(np.sum(d * w.sum(axis=-1)))
    return float(np.sum(d * w))


@dataclass(frozen=True)
class DivergenceCurve:
    reference: float
    grid: np.ndarray
    d_sce: np.ndarray
    d_ns: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["p", "d_sce", "d_ns"])
            for row in zip(self.grid, self.d_sce, self.d_ns):
                writer.writerow([f"{v:.17g}" for v in row])


def divergence_curve(reference: float = 0.5, n_points: int = 999) -> DivergenceCurve:
    """Divergence from ``reference`` to each ``p`` on an open grid in (0, 1).

    The grid is ``k / (n_points + 1)`` for ``k = 1..n_points``, so
    ``n_points=999`` hits 0.001, ..., 0.5, ..., 0.999.
    """
    if not 0 < reference < 1:
        raise DomainError(f"reference must lie in (0, 1), got {reference}")
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    grid = np.arange(1, n_points + 1) / (n_points + 1)
    ref = np.full_like(grid, reference)
    return DivergenceCurve(
        float(reference),
        grid,
        pointwise_divergence(SCE_BINARY, ref, grid),
        pointwise_divergence(NS_BINARY, ref, grid),
    )


def logsum_bound_check(p_d, p_theta, j: int) -> tuple[float, float]:
    """KL over all labels versus KL after collapsing to ``{j, not j}``.

    The log-sum inequality guarantees ``multi >= binary``.
    """
    p = np.asarray(p_d, dtype=float)
    q = np.asarray(p_theta, dtype=float)
    if p.shape != q.shape or p.ndim != 1 or len(p) < 2:
        raise ValueError("need two equal-length vectors with at least 2 labels")
    if np.any(p <= 0) or np.any(q <= 0):
        raise DomainError("both distributions must be strictly positive")
    multi = float(np.sum(p * np.log(p / q)))
    pj, qj = p[j], q[j]
    binary = float(pj * np.log(pj / qj) + (1 - pj) * np.log((1 - pj) / (1 - qj)))
    return multi, binary


def ns_instance_loss(g, f):
    """Per-instance NS integrand ``log(1 + g) + f log(1 + 1/g)`` in ``g``."""
    g = _positive(g)
    return np.log1p(g) + f * np.log1p(1.0 / g)


def sce_instance_loss(scores, gold: int) -> float:
    """Per-instance SCE loss in logits, ``logsumexp(s) - s[gold]``."""
    s = np.asarray(scores, dtype=float)
    m = s.max()
    return float(m + np.log(np.exp(s - m).sum()) - s[gold])
