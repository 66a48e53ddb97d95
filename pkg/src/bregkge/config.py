"""INI run configuration: parsing, validation, resolution and round-tripping.

A run file has the sections ``[data]``, ``[model]``, ``[loss]``, ``[optim]``
and ``[eval]``. Every key maps onto one field of the data settings,
:class:`~bregkge.models.ModelSpec`, :class:`~bregkge.losses.LossSpec` or
:class:`~bregkge.trainer.TrainConfig`. Unknown sections or keys are errors,
and ``model.seed`` must always be given.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .losses import LossSpec, LossSpecError
from .models import ModelSpec, ModelSpecError
from .trainer import TrainConfig

DATA_ENV = "BREGKGE_DATA_DIR"
SECTIONS = ("data", "model", "loss", "optim", "eval")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    """Where the splits come from.

    Either ``dir`` (holding ``train.txt``/``valid.txt``/``test.txt``),
    explicit ``train``/``valid``/``test`` paths, or ``synthetic = true`` for
    the seeded synthetic graph.
    """

    dir: str | None = None
    train: str | None = None
    valid: str | None = None
    test: str | None = None
    synthetic: bool = False
    symmetric: bool = False
    synthetic_seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    filtered: bool = True
    split: str = "test"

    def __post_init__(self):
        if self.split not in ("valid", "test"):
            raise ConfigError("eval.split must be 'valid' or 'test'")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_ini(self) -> str:
        return dump_config(self)

    def digest(self, n: int = 12) -> str:
        """Stable short hash of the resolved config, used to name run directories."""
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:n]

    def to_dict(self) -> dict:
        return {"data": vars(self.data).copy(), "eval": vars(self.eval).copy(), **self.train.to_dict()}


# key -> (owner, attribute). Owners: data, model, loss, train, eval.
_SCHEMA = {
    "data": {k: ("data", k) for k in ("dir", "train", "valid", "test", "synthetic", "symmetric",
                                      "synthetic_seed")},
    "model": {"family": ("model", "family"), "dim": ("model", "dim"), "init": ("model", "init"),
              "init_scale": ("model", "init_scale"), "seed": ("model", "seed")},
    "loss": {"family": ("loss", "family"), "nu": ("loss", "nu"), "lambda": ("loss", "lam"),
             "alpha": ("loss", "alpha"), "alpha_warmup": ("loss", "alpha_warmup"),
             "mode": ("loss", "mode"), "bc_clamp_low": ("loss", "bc_lo"),
             "bc_clamp_high": ("loss", "bc_hi")},
    "optim": {k: ("train", k) for k in ("optimizer", "lr", "batch_size", "decay", "max_epochs",
                                        "reg_p", "reg_entity", "reg_relation", "dropout_entity",
                                        "dropout_relation", "full_batch", "backtracking",
                                        "warm_start")},
    "eval": {"eval_every": ("train", "eval_every"), "patience": ("train", "patience"),
             "filtered": ("eval", "filtered"), "split": ("eval", "split")},
}

_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def _types():
    out = {}
    for owner, cls in (("data", DataConfig), ("model", ModelSpec), ("loss", LossSpec),
                       ("train", TrainConfig), ("eval", EvalConfig)):
        for f in fields(cls):
            out[(owner, f.name)] = f.type if isinstance(f.type, str) else f.type.__name__
    out[("loss", "bc_lo")] = out[("loss", "bc_hi")] = "float"
    return out


_TYPES = _types()


def _convert(section, key, raw: str, type_name: str):
    raw = raw.strip()
    try:
        if "None" in type_name and raw.lower() in ("", "none"):
            return None
        if type_name.startswith("bool"):
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        if type_name.startswith("int"):
            return int(raw)
        if type_name.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type_name}") from None


def _resolve_path(value, base: Path) -> str | None:
    if value is None:
        return None
    p = Path(os.path.expanduser(value))
    return str(p if p.is_absolute() else (base / p).resolve())


def _resolve_data(data: DataConfig, config_dir: Path) -> DataConfig:
    if data.synthetic:
        if any((data.dir, data.train, data.valid, data.test)):
            raise ConfigError("[data] synthetic = true excludes dir/train/valid/test")
        return data
    if data.dir is None and data.train is None:
        raise ConfigError("[data] needs dir, train or synthetic = true")
    root = Path(os.environ[DATA_ENV]) if os.environ.get(DATA_ENV) else config_dir
    d = _resolve_path(data.dir, root)
    base = Path(d) if d else config_dir
    split = {}
    for name in ("train", "valid", "test"):
        given = getattr(data, name)
        split[name] = _resolve_path(given, base) if given else (str(Path(d) / f"{name}.txt") if d else None)
    return replace(data, dir=d, **split)


def parse_config(text: str, config_dir=".") -> RunConfig:
    """Parse INI text. Relative data paths are resolved against ``$BREGKGE_DATA_DIR``
    (for ``dir``) or ``config_dir``."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values: dict = {o: {} for o in ("data", "model", "loss", "train", "eval")}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            owner, attr = _SCHEMA[section][key]
            values[owner][attr] = _convert(section, key, raw, _TYPES[(owner, attr)])
    if "seed" not in values["model"]:
        raise ConfigError("[model] seed is mandatory")
    loss_kw = dict(values["loss"])
    lo, hi = loss_kw.pop("bc_lo", None), loss_kw.pop("bc_hi", None)
    if lo is not None or hi is not None:
        default = LossSpec().bc_clamp
        loss_kw["bc_clamp"] = (default[0] if lo is None else lo, default[1] if hi is None else hi)
    try:
        model = ModelSpec(**values["model"])
        loss = LossSpec(**loss_kw)
        train = TrainConfig(model=model, loss=loss, **values["train"])
        ev = EvalConfig(**values["eval"])
    except (ModelSpecError, LossSpecError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    data = _resolve_data(DataConfig(**values["data"]), Path(config_dir).resolve())
    if train.warm_start:
        train = replace(train, warm_start=_resolve_path(train.warm_start, Path(config_dir).resolve()))
    return RunConfig(train, data, ev)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Resolved config as INI text; parsing it back yields an equal config."""
    owners = {"data": cfg.data, "model": cfg.train.model, "loss": cfg.train.loss,
              "train": cfg.train, "eval": cfg.eval}
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for key, (owner, attr) in _SCHEMA[section].items():
            if attr == "bc_lo":
                v = owners["loss"].bc_clamp[0]
            elif attr == "bc_hi":
                v = owners["loss"].bc_clamp[1]
            else:
                v = getattr(owners[owner], attr)
            lines.append(f"{key} = {_fmt(v)}")
        lines.append("")
    return "\n".join(lines)


__all__ = ["ConfigError", "DataConfig", "EvalConfig", "RunConfig", "dump_config", "load_config",
           "parse_config"]
