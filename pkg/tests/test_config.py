import pytest

from bregkge.config import ConfigError, dump_config, load_config, parse_config

BASE = """
[data]
synthetic = true
[model]
family = rotate
dim = 8
seed = 11
[loss]
family = sans
nu = 16
alpha = 0.5
alpha_warmup = 3
[optim]
optimizer = adagrad
lr = 0.1
reg_p = 3
reg_entity = 1e-4
dropout_entity = 0.2
[eval]
eval_every = 2
patience = 4
"""


def test_fields_map_onto_specs():
    cfg = parse_config(BASE)
    t = cfg.train
    assert (t.model.family, t.model.dim, t.seed) == ("rotate", 8, 11)
    assert (t.loss.family, t.loss.nu, t.loss.alpha, t.loss.alpha_warmup) == ("sans", 16, 0.5, 3)
    assert (t.optimizer, t.lr, t.reg_p, t.reg_entity, t.dropout_entity) == ("adagrad", 0.1, 3, 1e-4, 0.2)
    assert (t.eval_every, t.patience) == (2, 4)
    assert cfg.data.synthetic


def test_round_trip():
    cfg = parse_config(BASE)
    assert parse_config(dump_config(cfg)) == cfg
    assert dump_config(parse_config(dump_config(cfg))) == dump_config(cfg)


def test_bc_clamp_keys():
    cfg = parse_config("[data]\nsynthetic = true\n[model]\nseed = 0\n[loss]\nfamily = sce-bc\nbc_clamp_low = 0.01\n")
    assert cfg.train.loss.bc_clamp == (0.01, 1000.0)
    assert parse_config(cfg.to_ini()) == cfg


@pytest.mark.parametrize("text, message", [
    ("[model]\nfamily = distmult\n", "seed is mandatory"),
    ("[model]\nseed = 1\ncolour = red\n", "unknown key"),
    ("[training]\nlr = 1\n", "unknown section"),
    ("[model]\nseed = x\n", "cannot parse"),
    ("[model]\nseed = 1\n[optim]\nfull_batch = maybe\n", "cannot parse"),
    ("[model]\nseed = 1\n[loss]\nfamily = sce\nalpha = 1\n", "alpha"),
    ("[model]\nseed = 1\ndim = 0\n", "dim"),
    ("[model]\nseed = 1\n", "needs dir"),
    ("not an ini", "malformed"),
])
def test_rejections(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.ini"
    with pytest.raises(ConfigError, match="nope.ini"):
        load_config(missing)


def test_relative_paths(tmp_path, monkeypatch):
    monkeypatch.delenv("BREGKGE_DATA_DIR", raising=False)
    (tmp_path / "c.ini").write_text("[data]\ntrain = a/train.txt\n[model]\nseed = 0\n")
    cfg = load_config(tmp_path / "c.ini")
    assert cfg.data.train == str(tmp_path / "a" / "train.txt")
    assert cfg.data.valid is None


def test_dir_resolves_against_data_root(tmp_path, monkeypatch):
    monkeypatch.setenv("BREGKGE_DATA_DIR", str(tmp_path / "root"))
    cfg = parse_config("[data]\ndir = FB15k-237\n[model]\nseed = 0\n", tmp_path)
    assert cfg.data.train == str(tmp_path / "root" / "FB15k-237" / "train.txt")
    assert cfg.data.test == str(tmp_path / "root" / "FB15k-237" / "test.txt")


def test_digest_is_stable_and_sensitive():
    a = parse_config(BASE)
    assert a.digest() == parse_config(BASE).digest()
    assert a.digest() != parse_config(BASE.replace("seed = 11", "seed = 12")).digest()


def test_toy_config_loads(toy_dir):
    cfg = load_config(toy_dir / "toy.ini")
    assert cfg.data.train.endswith("train.txt") and cfg.train.model.family == "distmult"
