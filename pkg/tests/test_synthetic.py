import numpy as np
import pytest

from bregkge.synthetic import SyntheticSpec, synthetic_graph


def test_default_shape_and_split():
    g = synthetic_graph()
    n = sum(len(s) for s in g.values())
    assert g["train"].n_entities == 200 and g["train"].n_relations == 5
    assert abs(len(g["train"]) / n - 0.8) < 0.02
    assert abs(len(g["valid"]) / n - 0.1) < 0.02


def test_seeded():
    a, b = synthetic_graph(seed=3), synthetic_graph(seed=3)
    assert all(np.array_equal(a[k].triples, b[k].triples) for k in a)
    assert not np.array_equal(a["train"].triples, synthetic_graph(seed=4)["train"].triples)


@pytest.mark.parametrize("symmetric", [False, True])
def test_splits_disjoint_and_entities_seen(symmetric):
    g = synthetic_graph(symmetric=symmetric)
    sets = {k: set(map(tuple, v.triples.tolist())) for k, v in g.items()}
    assert not sets["train"] & sets["valid"] and not sets["train"] & sets["test"]
    seen = set(g["train"].triples[:, [0, 2]].ravel().tolist())
    for k in ("valid", "test"):
        assert set(g[k].triples[:, [0, 2]].ravel().tolist()) <= seen


def test_symmetric_edges_stay_together():
    g = synthetic_graph(symmetric=True)
    for split in g.values():
        s = set(map(tuple, split.triples.tolist()))
        assert all((t, r, h) in s for h, r, t in s)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(n_entities=3, n_clusters=5)
    with pytest.raises(ValueError):
        SyntheticSpec(split=(0.5, 0.5, 0.5))
