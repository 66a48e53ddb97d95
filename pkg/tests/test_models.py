import numpy as np
import pytest

from bregkge import models
from bregkge.data import TAIL, Query
from bregkge.models import FAMILIES, ModelSpec, ModelSpecError, init_params, score_batch


def _params(family, dim=4, n_e=6, n_r=2, seed=0, init="xavier-normal"):
    return init_params(ModelSpec(family=family, dim=dim, seed=seed, init=init), n_e, n_r)


def test_spec_validation():
    with pytest.raises(ModelSpecError):
        ModelSpec(dim=0)
    with pytest.raises(ModelSpecError):
        ModelSpec(family="tucker")
    with pytest.raises(ModelSpecError):
        ModelSpec(init="orthogonal")


@pytest.mark.parametrize("family", FAMILIES)
def test_init_deterministic(family):
    assert _params(family, seed=3).equals(_params(family, seed=3))
    assert not _params(family, seed=3).equals(_params(family, seed=4))


def test_table_shapes():
    assert _params("tabular").tables["scores"].shape == (4 * 6, 6)
    assert _params("complex").tables["relation"].shape == (4, 8)
    assert _params("rotate").tables["relation"].shape == (4, 4)
    assert _params("rescal").tables["relation"].shape == (4, 16)


def test_xavier_uniform_bound():
    assert models.xavier_uniform_bound(10, 6) == pytest.approx(np.sqrt(6 / 16))
    p = init_params(ModelSpec("distmult", dim=50, init="xavier-uniform", seed=1), 200, 3)
    assert np.abs(p.tables["entity"]).max() <= models.xavier_uniform_bound(50, 200)


def test_rotate_phases_in_range():
    phase = _params("rotate", dim=64, n_e=5, n_r=20).tables["relation"]
    assert phase.min() >= -np.pi and phase.max() <= np.pi


def test_distmult_by_hand():
    p = _params("distmult", dim=2, n_e=2, n_r=1)
    p.tables["entity"][:] = [[1.0, 2.0], [1.0, 1.0]]
    p.tables["relation"][0] = [1.0, 1.0]
    assert score_batch(p, [0], [0])[0, 1] == 3.0


def test_transe_zero_vectors_score_zero():
    p = _params("transe", dim=3, n_e=2, n_r=1)
    p.tables["entity"][:] = 0.0
    p.tables["relation"][:] = 0.0
    assert np.all(score_batch(p, [0], [0]) == 0.0)


def test_complex_and_rescal_by_hand():
    p = _params("complex", dim=1, n_e=2, n_r=1)
    p.tables["entity"][:] = [[1.0, 2.0], [3.0, -1.0]]   # 1+2j, 3-1j
    p.tables["relation"][0] = [0.5, 1.0]                # 0.5+1j
    expected = ((1 + 2j) * (0.5 + 1j) * np.conj(3 - 1j)).real
    assert score_batch(p, [0], [0])[0, 1] == pytest.approx(expected)
    q = _params("rescal", dim=2, n_e=2, n_r=1)
    q.tables["entity"][:] = [[1.0, 2.0], [3.0, 4.0]]
    q.tables["relation"][0] = [1.0, 2.0, 3.0, 4.0]
    assert score_batch(q, [0], [0])[0, 1] == pytest.approx(np.array([1, 2]) @ np.array([[1, 2], [3, 4]]) @ np.array([3, 4]))


def test_rotate_by_hand():
    p = _params("rotate", dim=1, n_e=2, n_r=1)
    p.tables["entity"][:] = [[1.0, 0.0], [0.0, 1.0]]
    p.tables["relation"][0] = [np.pi / 2]
    assert score_batch(p, [0], [0])[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert score_batch(p, [0], [0])[0, 0] == pytest.approx(-np.sqrt(2))


def test_reciprocal_relations_are_independent():
    p = _params("distmult")
    s_fwd = score_batch(p, [1], [0])
    p.tables["relation"][2] += 1.0  # reverse of relation 0
    np.testing.assert_array_equal(score_batch(p, [1], [0]), s_fwd)
    assert not np.array_equal(score_batch(p, [1], [2]), s_fwd)


def test_score_all_matches_batch():
    p = _params("complex")
    q = Query(TAIL, 3, 1)
    np.testing.assert_array_equal(models.score_all(p, q), score_batch(p, [3], [1])[0])


def test_id_range_checked():
    p = _params("distmult")
    with pytest.raises(IndexError):
        score_batch(p, [6], [0])
    with pytest.raises(IndexError):
        score_batch(p, [0], [4])


def test_zero_weights_leave_gradient_unchanged():
    p = _params("rotate")
    g = p.zeros_like()
    models.grad_accumulate(p, [0, 1], [0, 3], np.zeros((2, 6)), g)
    assert all(not v.any() for v in g.values())


def test_tabular_gradient_is_identity(rng):
    p = _params("tabular")
    g = p.zeros_like()
    w = rng.normal(size=6)
    models.grad_accumulate(p, [2], [3], w[None, :], g)
    np.testing.assert_array_equal(g["scores"][3 * 6 + 2], w)
    assert np.count_nonzero(g["scores"]) == 6


def test_weights_shape_checked():
    p = _params("distmult")
    with pytest.raises(ValueError):
        models.grad_accumulate(p, [0], [0], np.zeros((1, 5)), p.zeros_like())


@pytest.mark.parametrize("family", FAMILIES)
def test_parameter_gradients_finite_difference(family, rng):
    h = 1e-5
    worst = 0.0
    for i in range(100):
        p = _params(family, dim=3, n_e=5, n_r=2, seed=i, init="normal")
        anchors = rng.integers(0, 5, size=3)
        rels = rng.integers(0, 4, size=3)
        W = rng.normal(size=(3, 5))
        g = p.zeros_like()
        models.grad_accumulate(p, anchors, rels, W, g)
        direction = {k: rng.normal(size=v.shape) for k, v in p.tables.items()}

        def objective(sign):
            q = p.copy()
            for k in q.tables:
                q.tables[k] += sign * h * direction[k]
            return float(np.sum(W * score_batch(q, anchors, rels)))

        fd = (objective(1) - objective(-1)) / (2 * h)
        an = sum(float(np.sum(g[k] * direction[k])) for k in g)
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    assert worst < 1e-5


def test_boundedness_dichotomy():
    rng = np.random.default_rng(0)
    best = {}
    for family in FAMILIES:
        top = -np.inf
        for _ in range(100):
            p = init_params(ModelSpec(family, dim=4, init="normal", seed=int(rng.integers(1 << 31))), 10, 1)
            top = max(top, float(score_batch(p, np.arange(10), np.zeros(10, dtype=int)).max()))
        best[family] = top
    assert best["transe"] <= 0 and best["rotate"] <= 0
    for family in ("tabular", "distmult", "complex", "rescal"):
        assert best[family] > 0


def test_relation_modulus_is_one():
    p = _params("rotate", dim=16)
    p.tables["relation"] += 123.456
    assert np.max(np.abs(models.relation_modulus(p) - 1.0)) < 1e-12


@pytest.mark.parametrize("family", FAMILIES)
def test_checkpoint_round_trip(family, tmp_path):
    p = _params(family, seed=9)
    path = tmp_path / "m.ckpt"
    models.save_checkpoint(path, p)
    assert models.load_checkpoint(path).equals(p)
    header = models.read_checkpoint_header(path)
    assert (header["family"], header["dim"], header["n_entities"], header["n_relations"], header["seed"]) == \
        (family, 4, 6, 2, 9)


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        models.load_checkpoint(bad)
    p = _params("distmult")
    good = tmp_path / "g.ckpt"
    models.save_checkpoint(good, p)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        models.load_checkpoint(good)
