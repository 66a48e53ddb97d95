"""``bregkge`` command line: train, evaluate, oracle, curve, stats, pretrain-pipeline."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bregman, models, oracle, trainer
from .config import DATA_ENV, ConfigError, DataConfig, RunConfig, load_config
from .data import TripleParseError, VocabularyError, load_shared, load_triples, to_queries
from .evaluation import FilterIndex, evaluate, kg_kl_divergence
from .synthetic import synthetic_graph

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_ORACLE = 5
ORACLE_TOL = 1e-3

logger = logging.getLogger("bregkge")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _config(path) -> RunConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def load_run_data(data: DataConfig) -> dict:
    """Splits named by a resolved data section; missing valid/test are omitted."""
    if data.synthetic:
        return synthetic_graph(seed=data.synthetic_seed, symmetric=data.symmetric)
    try:
        out = {"train": load_triples(data.train)}
        for name in ("valid", "test"):
            path = getattr(data, name)
            # splits defaulted from ``dir`` are optional, explicit ones are not
            if path and (data.dir is None or Path(path).exists()):
                out[name] = load_triples(path, out["train"].vocab)
    except (OSError, TripleParseError, VocabularyError) as exc:
        raise CliError(EXIT_DATA, f"data error: {exc}") from None
    return out


def _run_dir(out, cfg: RunConfig) -> Path:
    d = Path(out) / cfg.digest()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _filter(splits: dict, raw: bool) -> FilterIndex | None:
    if raw:
        return None
    return FilterIndex.from_triples(*splits.values())


def _train_one(cfg: RunConfig, splits: dict, run_dir: Path, init=None):
    data = to_queries(splits["train"])
    dev = to_queries(splits["valid"]) if "valid" in splits else None
    filt = _filter(splits, not cfg.eval.filtered)
    if init is None and cfg.train.warm_start:
        init = _warm(cfg, data)
    with open(run_dir / "progress.log", "w", encoding="utf-8") as log:
        def progress(epoch, loss, mrr):
            log.write(f"{epoch}\t{loss:.10g}\t{'' if mrr is None else f'{mrr:.10g}'}\n")

        try:
            report, params = trainer.train(cfg.train, data, dev, filt, init=init, progress=progress)
        except trainer.TrainingDivergedError as exc:
            raise CliError(EXIT_DIVERGED, f"training diverged: {exc}") from None
    ckpt = run_dir / "model.ckpt"
    models.save_checkpoint(ckpt, params)
    report.checkpoint = str(ckpt)
    return report, params, filt


def _warm(cfg: RunConfig, data):
    try:
        return trainer.warm_start(cfg.train, cfg.train.warm_start, data.n_entities, data.n_relations)
    except trainer.WarmStartError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot load warm-start checkpoint: {exc}") from None


def _metrics(params, splits, split, filt):
    if split not in splits:
        return None
    return evaluate(params, to_queries(splits[split]), filt).to_dict()


def _write_report(run_dir: Path, cfg: RunConfig, body: dict, wall_time: float) -> None:
    # wall time lives in its own file so report.json is reproducible byte for byte
    (run_dir / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    (run_dir / "report.json").write_text(_dump({"config": cfg.to_ini(), **body}), encoding="utf-8")
    (run_dir / "timing.json").write_text(_dump({"wall_time": wall_time}), encoding="utf-8")


def _report_dict(report: trainer.TrainReport) -> dict:
    d = report.to_dict()
    d.pop("wall_time")
    d.pop("checkpoint")
    return d


def cmd_train(args) -> int:
    cfg = _config(args.config)
    if args.warm_start:
        cfg = replace(cfg, train=replace(cfg.train, warm_start=str(Path(args.warm_start).resolve())))
    if args.max_epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, max_epochs=args.max_epochs))
    splits = load_run_data(cfg.data)
    run_dir = _run_dir(args.out, cfg)
    t0 = time.perf_counter()
    report, params, filt = _train_one(cfg, splits, run_dir)
    body = {"train": _report_dict(report), "metrics": _metrics(params, splits, cfg.eval.split, filt)}
    _write_report(run_dir, cfg, body, time.perf_counter() - t0)
    print(run_dir)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args.config)
    splits = load_run_data(cfg.data)
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.out) / cfg.digest() / "model.ckpt"
    try:
        params = models.load_checkpoint(ckpt)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"cannot load checkpoint {str(ckpt)!r}: {exc}") from None
    split = args.split or cfg.eval.split
    if split not in splits:
        raise CliError(EXIT_DATA, f"no {split} split configured")
    n_e, n_r = splits["train"].n_entities, splits["train"].n_relations
    if (params.n_entities, params.n_relations) != (n_e, n_r):
        raise CliError(EXIT_CONFIG, f"checkpoint covers {params.n_entities} entities / {params.n_relations} "
                                    f"relations, data has {n_e} / {n_r}")
    filt = _filter(splits, args.raw or not cfg.eval.filtered)
    text = evaluate(params, to_queries(splits[split]), filt).to_json()
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _sans_rows(seed: int, n_worlds: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_worlds):
        joint, _ = oracle.random_world(rng)
        cond, _ = oracle.conditional(joint)
        r = oracle.sans_boundary_report(cond)
        r["world"] = i
        r["passed"] = r["uniform_to_pd"] < 1e-12 and r["pd_to_uniform"] < 1e-12 and r["period"] == 2
        rows.append(r)
    return rows


def cmd_oracle(args) -> int:
    if args.row == "sans":
        rows = _sans_rows(args.seed, args.worlds)
    else:
        families = oracle.ANALYTIC_FAMILIES if args.row == "all" else (args.row,)
        try:
            rows = oracle.certify(args.worlds, args.seed, families, nu=args.nu)
        except oracle.OracleConvergenceError as exc:
            raise CliError(EXIT_ORACLE, f"oracle failed: {exc}") from None
        for r in rows:
            r["passed"] = r["max_abs_dev"] < ORACLE_TOL
    failed = [r["family"] + ("" if "world" not in r else f"[{r['world']}]") for r in rows if not r["passed"]]
    out = {"nu": args.nu, "seed": args.seed, "worlds": args.worlds, "rows": rows, "failed": failed}
    text = _dump(out)
    if args.json:
        Path(args.json).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if failed:
        raise CliError(EXIT_ORACLE, "failed rows: " + ", ".join(failed))
    return EXIT_OK


def cmd_curve(args) -> int:
    try:
        curve = bregman.divergence_curve(args.ref, args.points)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    curve.to_csv(args.out)
    print(f"wrote {len(curve.grid)} rows to {args.out}")
    return EXIT_OK


def _stats_paths(args):
    if args.dataset:
        root = os.environ.get(DATA_ENV)
        if not root:
            raise CliError(EXIT_DATA, f"--dataset needs ${DATA_ENV}")
        base = Path(root) / args.dataset
        return base / "train.txt", base / "test.txt"
    if not (args.train and args.test):
        raise CliError(EXIT_CONFIG, "give --train and --test, or --dataset")
    return Path(args.train), Path(args.test)


def cmd_stats(args) -> int:
    train_path, test_path = _stats_paths(args)
    try:
        train, test = load_shared(train_path, test_path)
    except (OSError, TripleParseError) as exc:
        raise CliError(EXIT_DATA, f"data error: {exc}") from None
    kl = kg_kl_divergence(train, test, eps=args.eps)
    name = args.name or args.dataset or train_path.parent.name
    print(f"dataset {name}: {train.n_entities} entities, {train.n_relations} relations, "
          f"{len(train)} train / {len(test)} test triples")
    print(f"kl {kl:.6f}")
    if args.csv:
        new = not Path(args.csv).exists()
        with open(args.csv, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["dataset", "kl"])
            w.writerow([name, f"{kl:.10g}"])
    return EXIT_OK


def cmd_pipeline(args) -> int:
    pre, fine = _config(args.pretrain), _config(args.finetune)
    if pre.data != fine.data:
        raise CliError(EXIT_CONFIG, "pretrain and finetune configs must share the [data] section")
    splits = load_run_data(fine.data)
    if "valid" not in splits:
        raise CliError(EXIT_DATA, "pipeline needs a valid split")
    run_dir = Path(args.out) / f"{pre.digest()}-{fine.digest()}"
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    data, dev = to_queries(splits["train"]), to_queries(splits["valid"])
    filt = _filter(splits, not fine.eval.filtered)
    try:
        rep, params = trainer.pretrain_pipeline(pre.train, fine.train, data, dev, filt,
                                                cold_start=not args.no_cold)
    except trainer.WarmStartError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except trainer.TrainingDivergedError as exc:
        raise CliError(EXIT_DIVERGED, f"training diverged: {exc}") from None
    models.save_checkpoint(run_dir / "model.ckpt", params)
    body = {
        "pretrain_config": pre.to_ini(),
        "finetune_config": fine.to_ini(),
        "pretrain": _report_dict(rep.pretrain),
        "finetune": _report_dict(rep.finetune),
        "cold": None if rep.cold is None else _report_dict(rep.cold),
        "gain": rep.gain,
    }
    (run_dir / "report.json").write_text(_dump(body), encoding="utf-8")
    (run_dir / "timing.json").write_text(_dump({"wall_time": time.perf_counter() - t0}), encoding="utf-8")
    print(run_dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bregkge", description="Knowledge graph embedding experiments.")
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads (1 = reference mode)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("config")
    t.add_argument("--out", default="runs")
    t.add_argument("--warm-start", dest="warm_start")
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="filtered ranking metrics of a checkpoint")
    e.add_argument("config")
    e.add_argument("--checkpoint")
    e.add_argument("--out", default="runs")
    e.add_argument("--split", choices=("valid", "test"))
    e.add_argument("--raw", action="store_true", help="unfiltered ranks (debug)")
    e.add_argument("--json")
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("oracle", help="certify objective distributions on random worlds")
    o.add_argument("--row", default="all", choices=("all",) + oracle.ANALYTIC_FAMILIES + ("sans",))
    o.add_argument("--nu", type=int, default=1)
    o.add_argument("--worlds", type=int, default=20)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--json")
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("curve", help="binary divergence curves as CSV")
    c.add_argument("--ref", type=float, default=0.5)
    c.add_argument("--points", type=int, default=999)
    c.add_argument("--out", default="curve.csv")
    c.set_defaults(func=cmd_curve)

    s = sub.add_parser("stats", help="split sizes and train/test conditional KL")
    s.add_argument("--train")
    s.add_argument("--test")
    s.add_argument("--dataset", help=f"directory name under ${DATA_ENV}")
    s.add_argument("--name")
    s.add_argument("--eps", type=float, default=1e-9)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_stats)

    pp = sub.add_parser("pretrain-pipeline", help="pretrain, warm-start fine-tune, cold-start baseline")
    pp.add_argument("pretrain")
    pp.add_argument("finetune")
    pp.add_argument("--out", default="runs")
    pp.add_argument("--no-cold", dest="no_cold", action="store_true")
    pp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
