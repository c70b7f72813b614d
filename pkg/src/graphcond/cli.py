"""Command-line entry point: ``graphcond {condense,baseline,evaluate,diagnose}``.

Settings come from built-in defaults, then a JSON file given with ``--config``,
then explicit flags (highest precedence).  Failures print one JSON line
``{"error": <kind>, "message": <text>}`` to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds
from .baselines import METHODS, condensed_graphs, dcg_condense
from .condense import (CondenseConfig, condense, condense_bilevel, discretize, init_synthetic,
                       to_graphs)
from .evaluation import EvalConfig, evaluate_graphs, run_protocol
from .graphs import (DatasetFormatError, parse_tu_dataset, read_condensed, split_dataset,
                     toy_dataset, write_condensed)
from .models import ModelConfig

log = logging.getLogger("graphcond")

DATA_ENV = "GRAPHCOND_DATA"
LOG_COLUMNS = ("step", "class", "match_loss", "reg_loss", "tau", "mean_sigma_omega")

DEFAULTS = {
    "dataset": "MUTAG", "data_dir": None, "toy": False, "split_seed": 0, "out": None,
    "gpc": 1, "seed": 0, "k1": 1000, "k2": 1, "lr_omega": 1.0, "lr_feat": 0.01, "beta": 0.1,
    "epsilon": None, "tau0": 1.0, "tau_final": 0.1, "pooling": "mean", "arch": "gcn", "depth": 3,
    "hidden": 128, "batch": 256, "optimizer": "sgd", "norm_T": 500,
    "bilevel": False, "inner": 5, "outer": 10,
    "method": "doscond", "metric": "accuracy", "epochs": 500, "lr": 0.001, "cseeds": 5, "tseeds": 10,
    "discretization": "threshold", "pretrain_epochs": 500, "condensed": None, "jobs": 1,
    "terms": False, "term_epochs": 10, "bound_trials": 0, "bound_T": 100, "sweep": False,
    "betas": [0.0, 0.1, 1.0, 10.0], "sweep_k1": 200,
}
CHOICES = {
    "pooling": ("mean", "sum"), "arch": ("gcn", "sgc"), "optimizer": ("sgd", "adam"),
    "method": METHODS, "metric": ("accuracy", "roc_auc"), "discretization": ("threshold", "sample"),
}


class ConfigError(ValueError):
    pass


def _add(p, *names, **kw):
    kw.setdefault("default", argparse.SUPPRESS)
    p.add_argument(*names, **kw)


def _data_args(p):
    _add(p, "--dataset", help="TU dataset name (directory under --data-dir)")
    _add(p, "--data-dir", help=f"root holding <name>/ folders (default ${DATA_ENV} or ./data)")
    _add(p, "--toy", action="store_true", help="use the built-in triangle/path dataset")
    _add(p, "--split-seed", type=int)
    _add(p, "--config", help="JSON file with settings")
    _add(p, "--out", help="output directory")
    _add(p, "--jobs", type=int, help="worker processes")
    _add(p, "--seed", type=int)


def _condense_args(p):
    _add(p, "--gpc", type=int, help="graphs per class")
    _add(p, "--k1", type=int, help="number of sampled initializations")
    _add(p, "--k2", type=int, help="adjacency samples per initialization")
    _add(p, "--lr-omega", type=float)
    _add(p, "--lr-feat", type=float)
    _add(p, "--beta", type=float, help="sparsity weight")
    _add(p, "--epsilon", type=float, help="sparsity target (default: initial edge density)")
    _add(p, "--tau0", type=float)
    _add(p, "--tau-final", type=float)
    _add(p, "--pooling", choices=CHOICES["pooling"])
    _add(p, "--arch", choices=CHOICES["arch"])
    _add(p, "--depth", type=int)
    _add(p, "--hidden", type=int)
    _add(p, "--batch", type=int, help="real graphs per class per step")
    _add(p, "--optimizer", choices=CHOICES["optimizer"])
    _add(p, "--discretization", choices=CHOICES["discretization"])


def _eval_args(p):
    _add(p, "--metric", choices=CHOICES["metric"])
    _add(p, "--epochs", type=int)
    _add(p, "--lr", type=float)
    _add(p, "--cseeds", type=int)
    _add(p, "--tseeds", type=int)
    _add(p, "--pretrain-epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphcond",
                                     description="Graph dataset condensation by one-step gradient matching.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("condense", help="learn a condensed graph set")
    _data_args(p)
    _condense_args(p)
    _add(p, "--bilevel", action="store_true", help="trajectory matching instead of one-step")
    _add(p, "--inner", type=int, help="model updates between matching steps (--bilevel)")
    _add(p, "--outer", type=int, help="matching steps per initialization (--bilevel)")

    p = sub.add_parser("baseline", help="coreset selection or feature-only matching")
    _data_args(p)
    _condense_args(p)
    _add(p, "--method", choices=[m for m in METHODS if m != "doscond"])
    _add(p, "--pretrain-epochs", type=int)

    p = sub.add_parser("evaluate", help="train on condensed graphs, test on real ones")
    _data_args(p)
    _condense_args(p)
    _eval_args(p)
    _add(p, "--method", choices=METHODS)
    _add(p, "--condensed", help="evaluate this condensed-set directory instead of condensing")

    p = sub.add_parser("diagnose", help="bound terms, loss-gap checks and sparsity sweeps")
    _data_args(p)
    _condense_args(p)
    _eval_args(p)
    _add(p, "--condensed", help="condensed-set directory for the term diagnostics")
    _add(p, "--terms", action="store_true", help="write l1/l2 per condensation epoch")
    _add(p, "--term-epochs", type=int)
    _add(p, "--bound-trials", type=int, help="random instances for the bound check")
    _add(p, "--bound-T", type=int)
    _add(p, "--sweep", action="store_true", help="sparsity weight sweep")
    _add(p, "--betas", type=float, nargs="+")
    _add(p, "--sweep-k1", type=int)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON config and explicit flags, then validate."""
    cfg = dict(DEFAULTS)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    path = getattr(args, "config", None)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    cfg.update(flags)
    for key, allowed in CHOICES.items():
        if cfg[key] not in allowed:
            raise ConfigError(f"{key} must be one of {list(allowed)}, got {cfg[key]!r}")
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    try:
        condense_config(cfg)
        eval_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def condense_config(cfg: dict) -> CondenseConfig:
    names = {f.name for f in dataclasses.fields(CondenseConfig)}
    return CondenseConfig(**{k: cfg[k] for k in names if k in cfg})


def eval_config(cfg: dict) -> EvalConfig:
    names = {f.name for f in dataclasses.fields(EvalConfig)}
    return EvalConfig(**{k: cfg[k] for k in names if k in cfg})


def data_root(cfg: dict) -> Path:
    return Path(cfg["data_dir"] or os.environ.get(DATA_ENV) or "data")


def load_dataset(cfg: dict):
    if cfg["toy"] or cfg["dataset"].lower() == "toy":
        return toy_dataset(seed=cfg["split_seed"])
    directory = data_root(cfg) / cfg["dataset"]
    if not directory.is_dir():
        raise DatasetFormatError(f"dataset directory {directory} not found "
                                 f"(set --data-dir or ${DATA_ENV})")
    return split_dataset(parse_tu_dataset(directory, cfg["dataset"]), seed=cfg["split_seed"])


def out_dir(cfg: dict, default: str) -> Path:
    path = Path(cfg["out"] or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})


def _save_set(graphs, ds, cfg, out, method, extra=None):
    settings = {k: cfg[k] for k in sorted(cfg) if k not in ("out", "jobs", "data_dir")}
    return write_condensed(graphs, out, name="CONDENSED", graphs_per_class=cfg["gpc"],
                           num_classes=ds.num_classes, seed=cfg["seed"], config=settings,
                           discretization=cfg["discretization"],
                           extra={"method": method, "dataset": ds.name, "config": settings,
                                  "readout": "pool-then-linear",
                                  "non_edge_logit": -5.0, **(extra or {})})


def cmd_condense(cfg: dict) -> int:
    ds = load_dataset(cfg)
    ccfg = condense_config(cfg)
    out = out_dir(cfg, f"runs/{ds.name}_gpc{ccfg.gpc}_s{ccfg.seed}")
    t0 = time.perf_counter()
    if cfg["bilevel"]:
        syn = condense_bilevel(ds, ccfg, cfg["inner"], cfg["outer"])
    else:
        syn = condense(ds, ccfg, jobs=cfg["jobs"])
    log.info("condensation took %.1fs", time.perf_counter() - t0)
    graphs = to_graphs(syn, cfg["discretization"], ccfg.seed)
    _save_set(graphs, ds, cfg, out, "doscond-bilevel" if cfg["bilevel"] else "doscond",
              {"epsilon": [float(e) for e in syn.epsilon]})
    write_csv(out / "log.csv", LOG_COLUMNS, syn.log)
    np.savez(out / "synthetic.npz", omega=syn.omega, features=syn.features, labels=syn.labels)
    return 0


def cmd_baseline(cfg: dict) -> int:
    ds = load_dataset(cfg)
    ccfg = condense_config(cfg)
    method = cfg["method"] if cfg["method"] != "doscond" else "random"
    out = out_dir(cfg, f"runs/{ds.name}_{method}_gpc{ccfg.gpc}_s{ccfg.seed}")
    if method == "dcg":
        syn = dcg_condense(ds, ccfg, jobs=cfg["jobs"])
        graphs = to_graphs(syn, "threshold")
        write_csv(out / "log.csv", LOG_COLUMNS, syn.log)
    else:
        graphs = condensed_graphs(ds, method, ccfg, pretrain_epochs=cfg["pretrain_epochs"],
                                  cache_dir=out)
    _save_set(graphs, ds, cfg, out, method)
    return 0


def cmd_evaluate(cfg: dict) -> int:
    ds = load_dataset(cfg)
    ccfg = condense_config(cfg)
    ecfg = eval_config(cfg)
    if cfg["condensed"]:
        cond, manifest = read_condensed(cfg["condensed"])
        mcfg = ccfg.model(ds.feature_dim, ds.num_classes)
        if cond.feature_dim != ds.feature_dim:
            raise DatasetFormatError("condensed features do not match the dataset")
        report = evaluate_graphs(list(cond.graphs), ds, mcfg, ecfg,
                                 method=manifest.get("method", "condensed"),
                                 cseed=manifest["seed"], jobs=cfg["jobs"])
    else:
        report = run_protocol(ds, cfg["method"], ccfg, ecfg, jobs=cfg["jobs"],
                              pretrain_epochs=cfg["pretrain_epochs"])
    out = out_dir(cfg, f"runs/{ds.name}_{report.method}_gpc{report.gpc}_eval")
    report.write(out)
    print(f"{report.method} {report.dataset} gpc={report.gpc} {ecfg.metric} "
          f"mean={report.mean:.4f} std={report.std:.4f} runs={len(report.runs)}")
    return 0


def term_rows(ds, ccfg: CondenseConfig, epochs: int, T: int = 500) -> list:
    """l1/l2 at the initialization sampled at each of the first ``epochs`` steps."""
    from .condense import _theta, symmetrize_upper
    from . import autodiff as ad

    ccfg = dataclasses.replace(ccfg, arch="sgc")
    mcfg = ccfg.model(ds.feature_dim, ds.num_classes)
    syn = init_synthetic(ds, ccfg.gpc, seed=ccfg.seed)
    real = ds.subset("train")
    rows = []
    for epoch in range(epochs):
        adjs = [symmetrize_upper(ad._sigmoid(om)) for om in syn.omega]
        l1, l2 = bounds.bound_terms(real, adjs, list(syn.features), syn.labels,
                                    _theta(mcfg, ccfg.seed, epoch), mcfg, T)
        rows.append({"epoch": epoch, "l1": l1, "l2": l2})
        syn = condense(ds, dataclasses.replace(ccfg, k1=epoch + 1))
    return rows


def sweep_rows(ds, ccfg: CondenseConfig, ecfg: EvalConfig, betas) -> list:
    from . import autodiff as ad

    mcfg = ccfg.model(ds.feature_dim, ds.num_classes)
    rows = []
    for beta in betas:
        syn = condense(ds, dataclasses.replace(ccfg, beta=beta))
        iu = np.triu_indices(syn.node_count, 1)
        density = float(ad._sigmoid(syn.omega[:, iu[0], iu[1]]).mean())
        report = evaluate_graphs(to_graphs(syn), ds, mcfg, ecfg, method="doscond", cseed=ccfg.seed)
        rows.append({"beta": beta, "accuracy": report.mean, "sparsity": density})
    return rows


def bound_rows(trials: int, T: int, pooling: str, seed: int) -> list:
    results = bounds.theorem1_trials(trials, bounds.BoundCheckConfig(T=T, pooling=pooling), seed)
    return [{"trial": t, "lhs": r.lhs, "rhs": r.rhs, "holds": str(r.holds).lower()}
            for t, r in enumerate(results)]


def cmd_diagnose(cfg: dict) -> int:
    if not (cfg["toy"] or cfg["condensed"] or cfg["dataset"].lower() == "toy"):
        raise ConfigError("diagnose needs --toy or --condensed")
    ds = load_dataset(dict(cfg, toy=cfg["toy"] or not cfg["condensed"]))
    ccfg = condense_config(cfg)
    ecfg = eval_config(cfg)
    out = out_dir(cfg, f"runs/{ds.name}_diagnose")
    run_all = not (cfg["terms"] or cfg["sweep"] or cfg["bound_trials"])
    if cfg["terms"] or run_all:
        write_csv(out / "terms.csv", ("epoch", "l1", "l2"), term_rows(ds, ccfg, cfg["term_epochs"]))
    if cfg["sweep"] or run_all:
        rows = sweep_rows(ds, dataclasses.replace(ccfg, k1=cfg["sweep_k1"]),
                          dataclasses.replace(ecfg, tseeds=min(ecfg.tseeds, 5)), cfg["betas"])
        write_csv(out / "sweep.csv", ("beta", "accuracy", "sparsity"), rows)
    if cfg["bound_trials"] or run_all:
        rows = bound_rows(cfg["bound_trials"] or 5, cfg["bound_T"], cfg["pooling"], cfg["seed"])
        write_csv(out / "theorem1.csv", ("trial", "lhs", "rhs", "holds"), rows)
    return 0


COMMANDS = {"condense": cmd_condense, "baseline": cmd_baseline, "evaluate": cmd_evaluate,
            "diagnose": cmd_diagnose}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        return _fail("config", str(exc), 2)
    except DatasetFormatError as exc:
        return _fail("dataset", str(exc), 3)
    except (ValueError, FloatingPointError, RuntimeError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
