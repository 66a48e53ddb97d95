import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bregkge import bregman
from bregkge.bregman import NS_BINARY, SCE_BINARY, SCE_ENTROPY, DomainError


def test_psi_closed_forms():
    assert bregman.psi(NS_BINARY, 1.0) == pytest.approx(-2 * math.log(2), abs=1e-12)
    assert bregman.psi(SCE_ENTROPY, [0.5, 0.5]) == pytest.approx(-math.log(2), abs=1e-12)
    assert abs(bregman.psi(SCE_ENTROPY, [1.0])) < 1e-12


def test_psi_domain_errors():
    with pytest.raises(DomainError):
        bregman.psi(NS_BINARY, 0.0)
    with pytest.raises(DomainError):
        bregman.psi(SCE_ENTROPY, [-0.1, 1.1])
    with pytest.raises(ValueError):
        bregman.psi("bogus", 1.0)


def test_pointwise_spot_values():
    # ln(0.5) - 0.5 ln(0.25) - 0.5 ln(0.75)
    sce = math.log(0.5) - 0.5 * math.log(0.25) - 0.5 * math.log(0.75)
    assert sce == pytest.approx(0.143841, abs=1e-6)
    assert bregman.pointwise_divergence(SCE_BINARY, 0.5, 0.25) == pytest.approx(sce, abs=1e-12)
    assert bregman.pointwise_divergence(NS_BINARY, 0.5, 0.25) == pytest.approx(0.073091, abs=1e-6)
    for kind in (SCE_BINARY, NS_BINARY):
        assert bregman.pointwise_divergence(kind, 0.5, 0.5) == 0.0


def test_nonnegative_on_random_pairs(rng):
    f, g = rng.uniform(1e-3, 1 - 1e-3, size=(2, 10_000))
    for kind in (SCE_BINARY, NS_BINARY):
        d = bregman.pointwise_divergence(kind, f, g)
        assert np.all(d >= -1e-15)
        assert np.all(d[np.abs(f - g) > 1e-3] > 0)
    pf, pg = rng.dirichlet(np.ones(5), size=(2, 2000))
    assert np.all(bregman.pointwise_divergence(SCE_ENTROPY, pf, pg) >= -1e-15)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_zero_iff_equal(f, g):
    d = float(bregman.pointwise_divergence(NS_BINARY, f, g))
    if abs(f - g) < 1e-9:
        assert d < 1e-12
    else:
        assert d > 0


def test_grad_psi_matches_finite_differences(rng):
    h = 1e-6
    for kind, lo, hi in ((SCE_BINARY, 0.05, 0.95), (NS_BINARY, 0.05, 20.0)):
        z = rng.uniform(lo, hi, size=1000)
        fd = (bregman.psi(kind, z + h) - bregman.psi(kind, z - h)) / (2 * h)
        rel = np.abs(fd - bregman.grad_psi(kind, z)) / np.maximum(np.abs(fd), 1e-3)
        assert rel.max() < 1e-6
    p = rng.dirichlet(np.ones(4), size=1000)
    e = np.eye(4)[1]
    fd = (bregman.psi(SCE_ENTROPY, p + h * e) - bregman.psi(SCE_ENTROPY, p - h * e)) / (2 * h)
    rel = np.abs(fd - bregman.grad_psi(SCE_ENTROPY, p)[:, 1]) / np.maximum(np.abs(fd), 1e-3)
    assert rel.max() < 1e-6


def test_tilde_drops_the_psi_f_constant(rng):
    w = rng.dirichlet(np.ones(20)).reshape(5, 4)
    f, g = rng.uniform(0.05, 3.0, size=(2, 5, 4))
    tilde = bregman.expected_divergence_tilde(NS_BINARY, f, g, w)
    full = float(np.sum(bregman.pointwise_divergence(NS_BINARY, f, g) * w))
    assert tilde + float(np.sum(bregman.psi(NS_BINARY, f) * w)) == pytest.approx(full, abs=1e-10)
    assert bregman.expected_divergence(NS_BINARY, f, g, w) == pytest.approx(full, abs=1e-12)
    same = bregman.expected_divergence_tilde(NS_BINARY, f, f, w)
    assert same == pytest.approx(-float(np.sum(bregman.psi(NS_BINARY, f) * w)), abs=1e-12)


def test_tilde_entropy_is_cross_entropy(rng):
    joint = rng.dirichlet(np.ones(12)).reshape(3, 4)
    px = joint.sum(1, keepdims=True)
    p_d = joint / px
    p_theta = rng.dirichlet(np.ones(4), size=3)
    tilde = bregman.expected_divergence_tilde(SCE_ENTROPY, p_d, p_theta, joint)
    assert tilde == pytest.approx(-float(np.sum(joint * np.log(p_theta))), abs=1e-10)


def test_tilde_shape_mismatch():
    with pytest.raises(ValueError):
        bregman.expected_divergence_tilde(NS_BINARY, np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 2)))


def test_divergence_curve(tmp_path):
    c = bregman.divergence_curve(0.5, 999)
    assert len(c.grid) == 999 and c.grid[0] > 0 and c.grid[-1] < 1
    mid = int(np.flatnonzero(np.isclose(c.grid, 0.5))[0])
    assert abs(c.d_sce[mid]) < 1e-12 and abs(c.d_ns[mid]) < 1e-12
    others = np.arange(len(c.grid)) != mid
    assert np.all(c.d_sce[others] > c.d_ns[others])
    q = int(np.flatnonzero(np.isclose(c.grid, 0.25))[0])
    assert c.d_sce[q] == pytest.approx(0.143841, abs=1e-6)
    assert c.d_ns[q] == pytest.approx(0.073091, abs=1e-6)
    out = tmp_path / "c.csv"
    c.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "p,d_sce,d_ns" and len(lines) == 1000
    assert float(lines[q + 1].split(",")[1]) == c.d_sce[q]


def test_curve_preconditions():
    with pytest.raises(DomainError):
        bregman.divergence_curve(1.0)
    with pytest.raises(ValueError):
        bregman.divergence_curve(0.5, 1)


def test_logsum_bound(rng):
    p = np.array([0.2, 0.3, 0.5])
    assert bregman.logsum_bound_check(p, p, 1) == (0.0, 0.0)
    a, b = np.array([0.3, 0.7]), np.array([0.6, 0.4])
    multi, binary = bregman.logsum_bound_check(a, b, 0)
    assert multi == pytest.approx(binary, abs=1e-15)
    with pytest.raises(DomainError):
        bregman.logsum_bound_check([0.0, 1.0], [0.5, 0.5], 0)


def test_ns_integrand_is_not_convex():
    f, g, h = 0.1, 1.0, 1e-4
    second = (bregman.ns_instance_loss(g + h, f) - 2 * bregman.ns_instance_loss(g, f)
              + bregman.ns_instance_loss(g - h, f)) / h**2
    # -1/(1+g)^2 + f (2g+1)/(g^2 (1+g)^2) at g=1
    assert second == pytest.approx(-0.175, abs=1e-6)


def test_sce_instance_loss_is_convex(rng):
    h = 1e-3
    for _ in range(100):
        s = rng.normal(size=6)
        gold = int(rng.integers(6))
        base = bregman.sce_instance_loss(s, gold)
        for d in rng.normal(size=(100, 6)):
            d /= np.linalg.norm(d)
            second = bregman.sce_instance_loss(s + h * d, gold) - 2 * base + bregman.sce_instance_loss(s - h * d, gold)
            assert second >= -1e-12
