"""Render figure panels from results CSV tables.

The input format is the versioned results schema written by the
experiment harness: comment headers carrying ``# schema=1``, one header
row, and comma-separated data rows. This package reads that file format
only; it never imports the solver library and never modifies its inputs.

Four figure families are supported:

    recon-vs-d    reconstruction error against factorization width
    nucnorm-vs-d  nuclear norm against width, with reference lines
    flow-compare  bar chart comparing flow integrators per instance kind
    delta-hist    histograms of relative sub-optimality, one panel per
                  initialization scale
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SUPPORTED_SCHEMA = 1

FAMILIES = ("recon-vs-d", "nucnorm-vs-d", "flow-compare", "delta-hist")

_REQUIRED: Dict[str, Sequence[str]] = {
    "recon-vs-d": ("solver", "d", "alpha", "recon_rel", "status"),
    "nucnorm-vs-d": ("solver", "d", "alpha", "nuclear", "oracle_nuclear", "status"),
    "flow-compare": ("experiment", "solver", "nuclear", "oracle_nuclear"),
    "delta-hist": ("alpha", "delta"),
}

# log-spaced bins plus an underflow bin that catches exact zeros
DELTA_BIN_EDGES = [0.0] + [10.0 ** (-8 + 0.5 * k) for k in range(19)]


class RenderError(Exception):
    pass


@dataclass
class FigureSpec:
    family: str
    inputs: List[str]
    out: str
    group_by: Optional[List[str]] = None
    title: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise RenderError(
                f"unknown figure family {self.family!r}; "
                f"choose one of {', '.join(FAMILIES)}"
            )
        if not self.inputs:
            raise RenderError("no input CSV given")


def read_results_csv(path: str):
    """Parse a results table. Returns (schema, header, rows as dicts)."""
    if not os.path.exists(path):
        raise RenderError(f"input CSV {path} does not exist")
    schema = None
    header: Optional[List[str]] = None
    rows: List[dict] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# schema="):
                    schema = int(line.split("=", 1)[1])
                continue
            parts = line.split(",")
            if header is None:
                header = parts
                continue
            rows.append(dict(zip(header, parts)))
    if schema is None or header is None:
        raise RenderError(f"{path} is not a results table (missing schema header)")
    if schema != SUPPORTED_SCHEMA:
        raise RenderError(f"{path} has schema {schema}, supported: {SUPPORTED_SCHEMA}")
    return schema, header, rows


def _require_columns(header: Sequence[str], family: str, path: str) -> None:
    missing = [c for c in _REQUIRED[family] if c not in header]
    if missing:
        raise RenderError(
            f"{path} lacks column(s) {', '.join(missing)} required by {family}"
        )


def _f(rec: dict, col: str) -> float:
    try:
        return float(rec[col])
    except (KeyError, ValueError):
        return float("nan")


def _load(spec: FigureSpec):
    all_rows: List[dict] = []
    for path in spec.inputs:
        _, header, rows = read_results_csv(path)
        _require_columns(header, spec.family, path)
        all_rows.extend(rows)
    if not all_rows:
        raise RenderError("input CSV has no data rows; nothing to render")
    return all_rows


def _style():
    plt.rcdefaults()
    plt.rcParams.update({
        "figure.dpi": 110,
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "svg.hashsalt": "plotgen",
    })


def _curve_groups(rows, value_col):
    """Aggregate rows into (solver, alpha) curves over d with mean/std."""
    curves: Dict[tuple, Dict[int, List[float]]] = {}
    for r in rows:
        solver = r["solver"]
        if solver in ("min_frobenius",):
            continue
        key = (solver, _f(r, "alpha"))
        d = int(float(r["d"]))
        v = _f(r, value_col)
        if math.isnan(v):
            continue
        curves.setdefault(key, {}).setdefault(d, []).append(v)
    return curves


def _render_vs_d(spec: FigureSpec, rows, value_col, logy) -> dict:
    info = {"reference_lines": [], "curves": 0}
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    curves = _curve_groups(
        [r for r in rows if not r["solver"].startswith("x_gd")], value_col
    )
    for (solver, alpha) in sorted(curves, key=str):
        pts = curves[(solver, alpha)]
        ds = sorted(pts)
        means = [float(np.mean(pts[d])) for d in ds]
        stds = [float(np.std(pts[d])) for d in ds]
        label = f"{solver}, scale={alpha:g}" if not math.isnan(alpha) else solver
        ax.errorbar(ds, means, yerr=stds, marker="o", capsize=2, label=label)
        info["curves"] += 1

    xgd = [r for r in rows if r["solver"] == "x_gd"]
    if xgd and value_col in ("nuclear", "recon_rel"):
        ref = float(np.mean([_f(r, value_col) for r in xgd]))
        if not math.isnan(ref):
            ax.axhline(ref, color="tab:orange", linestyle="--", label="x_gd")
            info["reference_lines"].append("x_gd")
    if value_col == "nuclear":
        oracle_vals = [_f(r, "oracle_nuclear") for r in rows]
        oracle_vals = [v for v in oracle_vals if not math.isnan(v)]
        if oracle_vals:
            ax.axhline(float(np.mean(oracle_vals)), color="m", linestyle=":",
                       label="trace oracle")
            info["reference_lines"].append("oracle")

    ax.set_xlabel("factorization width d")
    ax.set_ylabel("relative reconstruction error"
                  if value_col == "recon_rel" else "nuclear norm")
    if logy:
        ax.set_yscale("log")
    ax.legend(fontsize=7)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return info


def _render_flow_compare(spec: FigureSpec, rows) -> dict:
    info = {"reference_lines": [], "bars": 0}
    solvers = ("ode", "time_ordered_exp", "factored_gd")
    experiments = sorted({r["experiment"] for r in rows})
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    width = 0.22
    xs = np.arange(len(experiments), dtype=float)
    for i, solver in enumerate(solvers):
        heights = []
        for exp in experiments:
            vals = [_f(r, "nuclear") for r in rows
                    if r["experiment"] == exp and r["solver"] == solver]
            heights.append(float(np.mean(vals)) if vals else np.nan)
        ax.bar(xs + (i - 1) * width, heights, width, label=solver)
        info["bars"] += sum(0 if math.isnan(h) else 1 for h in heights)

    for j, exp in enumerate(experiments):
        oracle = [_f(r, "oracle_nuclear") for r in rows if r["experiment"] == exp]
        oracle = [v for v in oracle if not math.isnan(v)]
        if oracle:
            lbl = "trace oracle" if j == 0 else None
            ax.hlines(float(np.mean(oracle)), xs[j] - 2 * width, xs[j] + 2 * width,
                      colors="m", linestyles=":", label=lbl)
            if "oracle" not in info["reference_lines"]:
                info["reference_lines"].append("oracle")
        xgd = [_f(r, "nuclear") for r in rows
               if r["experiment"] == exp and r["solver"] == "x_gd"]
        if xgd:
            lbl = "x_gd" if j == 0 else None
            ax.hlines(float(np.mean(xgd)), xs[j] - 2 * width, xs[j] + 2 * width,
                      colors="tab:orange", linestyles="--", label=lbl)
            if "x_gd" not in info["reference_lines"]:
                info["reference_lines"].append("x_gd")

    ax.set_xticks(xs)
    ax.set_xticklabels([e.split(":", 1)[-1] for e in experiments], fontsize=8)
    ax.set_ylabel("final nuclear norm")
    ax.legend(fontsize=7)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return info


def _render_delta_hist(spec: FigureSpec, rows) -> dict:
    alphas = sorted({_f(r, "alpha") for r in rows})
    alphas = [a for a in alphas if not math.isnan(a)]
    if not alphas:
        raise RenderError("no initialization scales found in the table")
    fig, axes = plt.subplots(1, len(alphas), figsize=(3.4 * len(alphas), 3.2),
                             squeeze=False)
    edges = np.array(DELTA_BIN_EDGES + [np.inf])
    for ax, alpha in zip(axes[0], alphas):
        deltas = [_f(r, "delta") for r in rows if _f(r, "alpha") == alpha]
        deltas = [v for v in deltas if not math.isnan(v)]
        counts, _ = np.histogram(np.maximum(deltas, 0.0), bins=edges)
        ax.bar(range(len(counts)), counts, width=0.9)
        ticks = [0, 1, 5, 9, 13, 17, len(counts) - 1]
        ax.set_xticks(ticks)
        labels = ["0"] + [f"1e{int(round(np.log10(edges[t]))):d}" for t in ticks[1:-1]]
        labels.append("inf")
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_title(f"init scale {alpha:g}", fontsize=9)
        ax.set_xlabel("relative sub-optimality")
        ax.set_ylabel("instances")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return {"panels": len(alphas), "reference_lines": []}


def render(spec: FigureSpec) -> dict:
    """Render one figure; returns a dict describing what was drawn.

    Raises RenderError (and writes nothing) on schema mismatch or an
    empty table.
    """
    rows = _load(spec)
    _style()
    try:
        if spec.family == "recon-vs-d":
            info = _render_vs_d(spec, rows, "recon_rel", logy=True)
        elif spec.family == "nucnorm-vs-d":
            info = _render_vs_d(spec, rows, "nuclear", logy=False)
        elif spec.family == "flow-compare":
            info = _render_flow_compare(spec, rows)
        else:
            info = _render_delta_hist(spec, rows)
        out_dir = os.path.dirname(os.path.abspath(spec.out))
        os.makedirs(out_dir, exist_ok=True)
        plt.savefig(spec.out, metadata={"Software": None})
        info["out"] = spec.out
        return info
    finally:
        plt.close("all")
