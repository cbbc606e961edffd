"""Command line front end: synth, train, encode, eval.

Runs are reproducible batch jobs: a flat key=value config file (with #
comments) drives training, every command requires an explicit seed where
randomness is involved, and all float output is printed with 4 decimals.
Exit codes: 0 success, 1 numerical failure, 2 bad input. The DCDH_THREADS
environment variable caps internal parallelism (read at package import).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import dcc, figures, retrieval
from .dataset import (
    DEFAULT_SPREAD,
    Dataset,
    DatasetError,
    load_dataset,
    save_dataset,
    split_query_database,
    synth_clusters,
)
from .losses import HyperParams
from .retrieval import CodesFormatError, load_codes, pack_codes, save_codes
from .train import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    encode,
    load_model,
    save_model,
    train,
)

DEFAULT_K_GRID = (1, 5, 10, 20, 50, 100)


class ConfigError(ValueError):
    """Bad run configuration file."""


_CONFIG_KEYS = {
    "seed", "dataset", "dataset_format", "synth_n", "synth_d", "synth_c",
    "synth_spread", "n_query", "k", "rho", "alpha", "lam", "mu", "gamma_focal",
    "epochs", "batch_size", "dcc_interval", "learning_rate", "visual_hidden",
    "label_hidden", "mode", "dcc_max_sweeps", "dcc_tol", "k_grid", "outdir",
}


@dataclass
class RunConfig:
    """One reproducible training run: data source, split, knobs, outputs."""

    seed: int
    k: int
    dataset: str | None = None
    dataset_format: str | None = None
    synth_n: int | None = None
    synth_d: int | None = None
    synth_c: int | None = None
    synth_spread: float = DEFAULT_SPREAD
    n_query: int | None = None
    rho: float | None = None
    alpha: float = 1.0
    lam: float = 1.0
    mu: float = 1.0
    gamma_focal: float = 2.0
    epochs: int = 30
    batch_size: int = 64
    dcc_interval: int = 1
    learning_rate: float = 1e-2
    visual_hidden: int = 64
    label_hidden: int = 32
    mode: str = "full"
    dcc_max_sweeps: int = dcc.DEFAULT_MAX_SWEEPS
    dcc_tol: float = dcc.DEFAULT_TOL
    k_grid: tuple = DEFAULT_K_GRID
    outdir: str = "out"

    def train_config(self) -> TrainConfig:
        hp = HyperParams(k=self.k, rho=self.rho, alpha=self.alpha, lam=self.lam,
                         mu=self.mu, gamma_focal=self.gamma_focal)
        return TrainConfig(
            hp=hp, epochs=self.epochs, batch_size=self.batch_size,
            dcc_interval=self.dcc_interval, learning_rate=self.learning_rate,
            seed=self.seed, visual_hidden=self.visual_hidden,
            label_hidden=self.label_hidden, mode=self.mode,
            dcc_max_sweeps=self.dcc_max_sweeps, dcc_tol=self.dcc_tol,
        )


def parse_config(path: str) -> dict:
    """Flat key=value file; # starts a comment; keys must be unique."""
    opts = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("%s:%d: expected key=value" % (path, lineno))
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError("%s:%d: unknown key %r" % (path, lineno, key))
            if key in opts:
                raise ConfigError("%s:%d: duplicate key %r" % (path, lineno, key))
            opts[key] = value
    return opts


def parse_k_grid(text: str) -> tuple:
    try:
        ks = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError("bad K grid %r" % text) from exc
    if not ks or any(v < 1 for v in ks) or list(ks) != sorted(set(ks)):
        raise ConfigError("K grid must be positive strictly ascending: %r" % text)
    return ks


def load_run_config(path: str) -> RunConfig:
    opts = parse_config(path)
    if "seed" not in opts:
        raise ConfigError("%s: seed is mandatory (no wall-clock entropy)" % path)
    if "k" not in opts:
        raise ConfigError("%s: code length k is mandatory" % path)

    def get(key, cast, default):
        return cast(opts[key]) if key in opts else default

    try:
        cfg = RunConfig(
            seed=int(opts["seed"]),
            k=int(opts["k"]),
            dataset=opts.get("dataset"),
            dataset_format=opts.get("dataset_format"),
            synth_n=get("synth_n", int, None),
            synth_d=get("synth_d", int, None),
            synth_c=get("synth_c", int, None),
            synth_spread=get("synth_spread", float, DEFAULT_SPREAD),
            n_query=get("n_query", int, None),
            rho=get("rho", float, None),
            alpha=get("alpha", float, 1.0),
            lam=get("lam", float, 1.0),
            mu=get("mu", float, 1.0),
            gamma_focal=get("gamma_focal", float, 2.0),
            epochs=get("epochs", int, 30),
            batch_size=get("batch_size", int, 64),
            dcc_interval=get("dcc_interval", int, 1),
            learning_rate=get("learning_rate", float, 1e-2),
            visual_hidden=get("visual_hidden", int, 64),
            label_hidden=get("label_hidden", int, 32),
            mode=opts.get("mode", "full"),
            dcc_max_sweeps=get("dcc_max_sweeps", int, dcc.DEFAULT_MAX_SWEEPS),
            dcc_tol=get("dcc_tol", float, dcc.DEFAULT_TOL),
            k_grid=parse_k_grid(opts["k_grid"]) if "k_grid" in opts else DEFAULT_K_GRID,
            outdir=opts.get("outdir", "out"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("%s: %s" % (path, exc)) from exc
    synth_given = [v is not None for v in (cfg.synth_n, cfg.synth_d, cfg.synth_c)]
    if cfg.dataset is None and not all(synth_given):
        raise ConfigError("%s: need dataset=<path> or synth_n/synth_d/synth_c" % path)
    if cfg.dataset is not None and any(synth_given):
        raise ConfigError("%s: dataset and synth_* are mutually exclusive" % path)
    return cfg


def _resolve_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset, cfg.dataset_format)
    return synth_clusters(cfg.synth_n, cfg.synth_d, cfg.synth_c,
                          cfg.synth_spread, cfg.seed)


def _write_history_csv(history, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,L1,L2,L3,total\n")
        for row in history:
            fh.write("%d,%.4f,%.4f,%.4f,%.4f\n"
                     % (row.epoch, row.l1, row.l2, row.l3, row.total))


def cmd_synth(args) -> int:
    ds = synth_clusters(args.n, args.d, args.c, args.spread, args.seed)
    save_dataset(ds, args.out, args.format)
    print("wrote %s (n=%d, d=%d, c=%d)" % (args.out, ds.n, ds.d, ds.c))
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.mode:
        cfg.mode = args.mode
    if args.outdir:
        cfg.outdir = args.outdir
    dataset = _resolve_dataset(cfg)
    n_query = cfg.n_query if cfg.n_query is not None else max(1, round(0.1 * dataset.n))
    split = split_query_database(dataset, n_query, cfg.seed)
    query_set = dataset.subset(split.query_indices)
    db_set = dataset.subset(split.database_indices)

    model = train(db_set, cfg.train_config())

    os.makedirs(cfg.outdir, exist_ok=True)
    save_dataset(query_set, os.path.join(cfg.outdir, "query.dcdh"))
    save_dataset(db_set, os.path.join(cfg.outdir, "database.dcdh"))
    save_model(model, os.path.join(cfg.outdir, "model.dcdhckpt"))
    save_codes(pack_codes(model.codes), os.path.join(cfg.outdir, "train_codes.dcdhcode"))
    _write_history_csv(model.history, os.path.join(cfg.outdir, "history.csv"))
    figures.save_history_figure(model.history, os.path.join(cfg.outdir, "history.png"))
    print("trained %d epochs (mode=%s); final objective %.4f"
          % (cfg.epochs, cfg.mode, model.history[-1].total))
    print("outputs in %s" % cfg.outdir)
    return 0


def cmd_encode(args) -> int:
    model = load_model(args.checkpoint)
    dataset = load_dataset(args.dataset, args.format)
    codes = encode(dataset.features, model)
    save_codes(pack_codes(codes), args.out)
    print("wrote %s (%d codes, %d bits)" % (args.out, codes.shape[1], codes.shape[0]))
    return 0


def cmd_eval(args) -> int:
    query_codes = load_codes(args.query_codes)
    db_codes = load_codes(args.db_codes)
    if query_codes.k != db_codes.k:
        raise CodesFormatError("code length mismatch: query k=%d vs database k=%d"
                               % (query_codes.k, db_codes.k))
    query_set = load_dataset(args.query_dataset)
    db_set = load_dataset(args.db_dataset)
    if query_set.n != query_codes.n or db_set.n != db_codes.n:
        raise DatasetError("codes/labels row count mismatch")
    if query_set.c != db_set.c:
        raise DatasetError("query and database label widths differ")
    k_grid = parse_k_grid(args.k_grid)

    rankings, rels = [], []
    for i in range(query_codes.n):
        rankings.append(retrieval.rank(query_codes.code(i), db_codes))
        rels.append(retrieval.relevance(query_set.labels[i], db_set.labels))
    result = retrieval.mean_average_precision(rankings, rels)
    curve = []
    for kk in k_grid:
        vals = [retrieval.precision_at_k(rk, rl, kk) for rk, rl in zip(rankings, rels)]
        curve.append(sum(vals) / len(vals))

    os.makedirs(args.outdir, exist_ok=True)
    report_lines = [
        "queries,%d" % query_codes.n,
        "database,%d" % db_codes.n,
        "bits,%d" % db_codes.k,
        "map,%.4f" % result.map,
        "queries_evaluated,%d" % result.n_evaluated,
        "queries_skipped,%d" % result.n_skipped,
    ]
    report_lines += ["precision@%d,%.4f" % (kk, p) for kk, p in zip(k_grid, curve)]
    report = "\n".join(report_lines) + "\n"
    with open(os.path.join(args.outdir, "report.csv"), "w", encoding="ascii") as fh:
        fh.write(report)
    with open(os.path.join(args.outdir, "curve.csv"), "w", encoding="ascii") as fh:
        fh.write("K,precision\n")
        for kk, p in zip(k_grid, curve):
            fh.write("%d,%.4f\n" % (kk, p))
    figures.save_precision_curve(k_grid, curve, os.path.join(args.outdir, "curve.png"))
    sys.stdout.write(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcdh",
                                     description="collaborative discrete hashing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic clustered dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--spread", type=float, default=DEFAULT_SPREAD)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--format", choices=("csv", "packed-binary"), default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from a run config file")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("full", "v", "s"), default=None)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a dataset with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", choices=("csv", "packed-binary"), default=None)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="rank queries against a database and report")
    p.add_argument("--query-codes", required=True)
    p.add_argument("--db-codes", required=True)
    p.add_argument("--query-dataset", required=True)
    p.add_argument("--db-dataset", required=True)
    p.add_argument("--k-grid", default=",".join(str(v) for v in DEFAULT_K_GRID))
    p.add_argument("--outdir", default="out")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CodesFormatError, CheckpointError,
            FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (TrainingDiverged, FloatingPointError, AssertionError) as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
