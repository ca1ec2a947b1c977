"""Command line entry point.

Subcommands mirror the experiment families plus direct oracle access:

    factorflow sweep --scale desk --out results/sweep
    factorflow flow  --scale smoke --out results/flow
    factorflow grid  --scale desk --threads 2 --out results/grid
    factorflow oracle --instance results/sweep/instances/instance_000.json
    factorflow check-kkt --instance inst.json --x x.json --tol 1e-5

Exit codes: 0 success, 1 configuration error, 2 hard solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import experiments as ex
from . import oracle as oracle_mod
from .measurements import instance_from_json
from .linalg import eigh_sym


class ConfigError(Exception):
    pass


def _apply_config(cfg, doc: dict, label: str):
    fields = {f.name for f in dataclasses.fields(cfg)}
    for key, val in doc.items():
        if key not in fields:
            raise ConfigError(f"unknown {label} config key {key!r}")
        setattr(cfg, key, val)
    return cfg


def _load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def sweep_preset(scale: str) -> ex.SweepConfig:
    if scale == "smoke":
        return ex.SweepConfig(
            n=12, d_grid=[1, 2, 4, 8, 12], step_policies=["fixed"],
            seeds=2, max_steps=60_000, residual_rel=1e-4,
        )
    if scale == "desk":
        return ex.SweepConfig()
    if scale == "paper":
        return ex.SweepConfig(
            n=50, d_grid=list(range(1, 51)), seeds=3,
            max_steps=1_000_000, residual_rel=1e-6,
        )
    raise ConfigError(f"unknown scale {scale!r}")


def flow_preset(scale: str) -> ex.FlowConfig:
    if scale == "smoke":
        return ex.FlowConfig(n=12, max_steps=60_000, residual_rel=1e-4)
    if scale == "desk":
        return ex.FlowConfig()
    if scale == "paper":
        return ex.FlowConfig(n=50, max_steps=1_000_000, residual_rel=1e-6)
    raise ConfigError(f"unknown scale {scale!r}")


def grid_preset(scale: str) -> ex.GridSearchConfig:
    if scale == "smoke":
        return ex.GridSearchConfig(values_per_entry=2, alphas=[1e-5, 1.0])
    if scale == "desk":
        return ex.GridSearchConfig(values_per_entry=5, alphas=[1e-5, 1.0])
    if scale == "paper":
        return ex.GridSearchConfig(values_per_entry=10, alphas=[1e-5, 1e-3, 1.0])
    raise ConfigError(f"unknown scale {scale!r}")


def _run_family(args) -> int:
    if args.command == "sweep":
        cfg = sweep_preset(args.scale)
    elif args.command == "flow":
        cfg = flow_preset(args.scale)
    else:
        cfg = grid_preset(args.scale)
    if args.config:
        _apply_config(cfg, _load_config(args.config), args.command)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    if args.command == "grid" and args.threads:
        cfg.workers = args.threads

    if args.command == "sweep":
        rows = ex.run_dimension_sweep(cfg)
        summary = ex.summarize(rows)
    elif args.command == "flow":
        rows = ex.run_flow_comparison(cfg)
        summary = ex.summarize(rows)
    else:
        rows, accounting = ex.run_grid_search(cfg)
        summary = ex.summarize(rows)
        summary["accounting"] = accounting
        print(json.dumps(accounting))
    print(ex.format_summary(summary))
    if cfg.out:
        print(f"results written to {cfg.out}")
    return 0


def _run_oracle(args) -> int:
    try:
        with open(args.instance, "r", encoding="utf-8") as f:
            inst = instance_from_json(json.load(f))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load instance {args.instance}: {exc}") from exc
    e = inst.ensemble
    res = oracle_mod.min_nuclear_psd(e, tol=args.tol, max_iters=args.max_iters)
    doc = {
        "status": res.status,
        "objective": res.objective,
        "iters": res.iters,
        "spectrum": eigh_sym(res.X).eigvals.tolist(),
        "certificate": res.certificate.as_dict() if res.certificate else None,
    }
    try:
        frob = oracle_mod.min_frobenius_solution(e)
        doc["frobenius_nuclear"] = float(np.sum(np.abs(eigh_sym(frob).eigvals)))
    except ValueError:
        doc["frobenius_nuclear"] = None
    out = json.dumps(doc, indent=2)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "oracle.json"), "w", encoding="utf-8") as f:
            f.write(out + "\n")
    print(out)
    return 0


def _run_check_kkt(args) -> int:
    try:
        with open(args.instance, "r", encoding="utf-8") as f:
            inst = instance_from_json(json.load(f))
        with open(args.x, "r", encoding="utf-8") as f:
            xdoc = json.load(f)
        X = np.asarray(xdoc["X"], dtype=float)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load inputs: {exc}") from exc
    cert = oracle_mod.kkt_check(X, inst.ensemble, tol=args.tol)
    out = json.dumps(cert.as_dict(), indent=2)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "certificate.json"), "w", encoding="utf-8") as f:
            f.write(out + "\n")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="factorflow",
        description="Matrix-factorization gradient flow experiments",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("sweep", "flow", "grid"):
        sp = sub.add_parser(name, help=f"run the {name} experiment family")
        sp.add_argument("--config", help="JSON config overriding the scale preset")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker processes (grid only)")
        sp.add_argument("--scale", choices=["smoke", "desk", "paper"], default="desk")

    so = sub.add_parser("oracle", help="solve the trace-minimization reference")
    so.add_argument("--instance", required=True, help="serialized instance JSON")
    so.add_argument("--tol", type=float, default=1e-8)
    so.add_argument("--max-iters", type=int, default=50_000)
    so.add_argument("--out", help="output directory")

    sk = sub.add_parser("check-kkt", help="certify a candidate solution")
    sk.add_argument("--instance", required=True, help="serialized instance JSON")
    sk.add_argument("--x", required=True, help='JSON file with key "X"')
    sk.add_argument("--tol", type=float, default=1e-5)
    sk.add_argument("--out", help="output directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("sweep", "flow", "grid"):
            return _run_family(args)
        if args.command == "oracle":
            return _run_oracle(args)
        return _run_check_kkt(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # hard solver failure
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
