"""Command line entry point.

    nnfeedback train|evaluate|compare CONFIG [--out-dir DIR] [--seed S] [--checkpoint PATH]

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 blow-up at
the initial network.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import (
    ConfigError,
    LinearSolveError,
    NewtonFailure,
    NumericalOverflowError,
    RiccatiError,
    UnrecoverableStartError,
)
from .evaluation import comparison_table, table_to_csv, table_to_text, validate_many
from .feedback import (
    LinearFeedback,
    NetworkFeedback,
    PSEFeedback,
    ZeroFeedback,
    load_checkpoint,
    lqr_gain,
    nn_init,
    save_checkpoint,
)
from .riccati import solve_care
from .systems import linearization
from .timestepping import write_trajectory_csv
from .training import train

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_START = 0, 2, 3, 4


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite_or_str(x):
    # JSON has no infinities; keep them readable
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _write_json(path: Path, data) -> None:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return _finite_or_str(v)

    path.write_text(json.dumps(clean(data), indent=2, default=_json_default) + "\n")


def riccati_law(system, beta):
    A, B = linearization(system)
    Q = system.output_matrix
    sol = solve_care(A, B, Q.T @ Q, beta)
    return sol, lqr_gain(sol.Pi, B, beta)


def initial_network(cfg: ExperimentConfig, system, seed: int):
    arch = cfg.network.architecture(system.n, system.m)
    theta = nn_init(arch, seed, cfg.network.init_scale)
    if cfg.network.warm_start == "lqr":
        if arch.widths[-2] != system.n or (arch.L > 1 and not arch.skip_connections):
            raise ConfigError("lqr warm start needs L = 1 or skip connections with width n before the output")
        _, K = riccati_law(system, cfg.training.beta)
        # with small hidden weights and skip connections the last hidden layer
        # is close to the identity plus a constant, which the shift removes
        theta.weights[-1] = K.copy()
    return theta


def run_train(cfg: ExperimentConfig, out_dir: Path, seed_override: int | None = None) -> dict:
    """Train from the config; ``seed_override`` reseeds initialization and sampling."""
    system = cfg.system.build()
    seed = cfg.training.seed if seed_override is None else seed_override
    theta0 = initial_network(cfg, system, seed)
    ens = cfg.training.ensemble(system, seed_override, screen_law=NetworkFeedback(theta0))
    t0 = time.perf_counter()
    report = train(system, theta0, ens)
    elapsed = time.perf_counter() - t0
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(report.theta, out_dir / "checkpoint.json")
    report.meta.update({"seed": seed, "runtime_s": elapsed, "n_training_states": len(ens.initial_conditions)})
    _write_json(out_dir / "train_report.json", report.to_dict(checkpoint="checkpoint.json"))
    summary = {
        "experiment": cfg.name,
        "system": cfg.system.name,
        "termination": report.termination,
        "iterations": report.iterations,
        "initial_objective": report.initial_objective,
        "final_objective": report.final_objective,
        "final_grad_norm": report.final_grad_norm,
        "runtime_s": elapsed,
    }
    if report.theta.L == 1:
        summary["learned_gain"] = report.theta.weights[0].tolist()
    try:
        sol, K = riccati_law(system, ens.beta)
        summary["riccati_gain"] = K.tolist()
        summary["riccati_residual"] = sol.residual_norm
    except RiccatiError as exc:
        summary["riccati_gain"] = None
        log.warning("no Riccati gain: %s", exc)
    _merge_summary(out_dir, "train", summary)
    return summary


def _merge_summary(out_dir: Path, key: str, data: dict) -> None:
    path = out_dir / "summary.json"
    summary = json.loads(path.read_text()) if path.exists() else {}
    summary[key] = data
    _write_json(path, summary)


def _checkpoint_path(out_dir: Path, checkpoint) -> Path:
    return Path(checkpoint) if checkpoint is not None else out_dir / "checkpoint.json"


def _rows_dict(rows):
    return [
        {"ic": r.ic, "controller": r.controller, "qy_l2": r.qy_l2, "u_l2": r.u_l2, "J": r.J, "status": r.status}
        for r in rows
    ]


def _write_trajectories(out_dir, name, law, names, trajs):
    for ic, tr in zip(names, trajs):
        write_trajectory_csv(out_dir / f"traj_{ic}_{name}.csv", tr, law)


def run_evaluate(cfg: ExperimentConfig, out_dir: Path, checkpoint=None) -> list:
    system = cfg.system.build()
    path = _checkpoint_path(out_dir, checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found; run train first or pass --checkpoint")
    theta = load_checkpoint(path)
    if theta.arch.n != system.n or theta.arch.m != system.m:
        raise ConfigError(f"checkpoint maps R^{theta.arch.n} -> R^{theta.arch.m}, system is {system.n} -> {system.m}")
    names, Y0 = cfg.evaluation.initial_states(system)
    if len(Y0) == 0:
        raise ConfigError("evaluation block has no initial conditions")
    ev = cfg.evaluation
    law = NetworkFeedback(theta)
    trajs = []
    rows = validate_many(system, law, Y0, cfg.training.beta, ev.T_val, ev.n_steps, "NN", ev.decay_tol,
                         trajectories=trajs)
    for ic, r in zip(names, rows):
        r.ic = ic
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_trajectories(out_dir, "NN", law, names, trajs)
    _write_json(out_dir / "eval.json", _rows_dict(rows))
    _merge_summary(out_dir, "evaluate", {
        "n_states": len(rows),
        "n_ok": sum(r.status == "ok" for r in rows),
        "statuses": {r.ic: r.status for r in rows},
    })
    return rows


def baseline_laws(cfg: ExperimentConfig, system):
    laws = []
    wanted = cfg.evaluation.baselines
    beta = cfg.training.beta
    if "uncontrolled" in wanted:
        laws.append(("uncontrolled", ZeroFeedback(system.n, system.m)))
    if "lqr" in wanted or "pse" in wanted:
        sol, K = riccati_law(system, beta)
        if "lqr" in wanted:
            laws.append(("LQR", LinearFeedback(K, "LQR")))
        if "pse" in wanted:
            laws.append(("PSE", PSEFeedback.from_system(system, sol.Pi, beta)))
    return laws


def run_compare(cfg: ExperimentConfig, out_dir: Path, checkpoint=None):
    system = cfg.system.build()
    laws = baseline_laws(cfg, system)
    path = _checkpoint_path(out_dir, checkpoint)
    if path.exists():
        laws.append(("NN", NetworkFeedback(load_checkpoint(path))))
    elif checkpoint is not None:
        raise ConfigError(f"checkpoint {path} not found")
    else:
        log.warning("no checkpoint at %s; comparing baselines only", path)
    names, Y0 = cfg.evaluation.initial_states(system)
    ev = cfg.evaluation
    trajs = {}
    groups = comparison_table(system, laws, Y0, cfg.training.beta, ev.T_val, ev.n_steps, names, ev.decay_tol,
                              trajectories=trajs)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_to_csv(groups, out_dir / "table.csv")
    for name, law in laws:
        _write_trajectories(out_dir, name, law, names, trajs[name])
    _merge_summary(out_dir, "compare", {
        "controllers": [name for name, _ in laws],
        "cells": [_rows_dict(g) for g in groups],
    })
    return groups


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnfeedback", description="Learn and compare feedback laws.")
    parser.add_argument("command", choices=["train", "evaluate", "compare"])
    parser.add_argument("config", help="experiment config (JSON)")
    parser.add_argument("--out-dir", default=None, help="output directory (default: config output_dir)")
    parser.add_argument("--seed", type=int, default=None, help="override the training seed")
    parser.add_argument("--checkpoint", default=None, help="network checkpoint for evaluate/compare")
    parser.add_argument("--variant", default=None, help="run a single named variant")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        runs = [(args.variant, cfg.variant(args.variant))] if args.variant else cfg.expand()
        base = Path(args.out_dir if args.out_dir is not None else cfg.output_dir)
        for variant, sub in runs:
            out_dir = base / variant if variant and not args.variant else base
            if args.command == "train":
                summary = run_train(sub, out_dir, args.seed)
                print(f"{sub.name}: {summary['termination']} after {summary['iterations']} iterations, "
                      f"J = {summary['final_objective']:.6g}")
            elif args.command == "evaluate":
                rows = run_evaluate(sub, out_dir, args.checkpoint)
                print(table_to_text([[r] for r in rows]))
            else:
                print(table_to_text(run_compare(sub, out_dir, args.checkpoint)))
    except OSError as exc:
        print(f"error: cannot read {exc.filename or args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnrecoverableStartError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_START
    except (NewtonFailure, RiccatiError, LinearSolveError, NumericalOverflowError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
