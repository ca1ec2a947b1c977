"""Experiment families: dimension sweeps, integrator comparisons, and the
exhaustive 3x3 completion grid search.

Every runner returns a list of ResultRow and optionally writes a results
CSV (versioned schema), a machine-readable summary, and serialized
instances. Output rows are sorted canonically so identical configs and
seeds reproduce identical files; the wall_s column and the generated-at
header line are the only nondeterministic bytes.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import oracle as oracle_mod
from .linalg import fro, nuclear_norm
from .measurements import (
    MeasurementEnsemble,
    ProblemInstance,
    completion_instance,
    gaussian_instance,
    instance_to_json,
)
from .optimizers import (
    CONVERGED,
    GDConfig,
    ODEConfig,
    Trajectory,
    factored_gd,
    gd_on_x,
    gradient_flow_ode,
    identity_factor,
    random_factor,
    svd_init,
    time_ordered_exp_solve,
)
from .tolerances import TOL

SCHEMA_VERSION = 1

CSV_COLUMNS = [
    "experiment",
    "instance_seed",
    "solver",
    "d",
    "alpha",
    "eta",
    "objective",
    "residual",
    "recon_rel",
    "recon_raw",
    "nuclear",
    "oracle_nuclear",
    "delta",
    "steps",
    "status",
    "wall_s",
]

# log-spaced bins for the relative sub-optimality histogram, plus an
# underflow bin that catches exact zeros and anything below 1e-8
DELTA_BIN_EDGES = [0.0] + [10.0 ** (-8 + 0.5 * k) for k in range(19)]


@dataclass
class ResultRow:
    experiment: str
    instance_seed: int
    solver: str
    d: int
    alpha: float
    eta: float
    objective: float
    residual: float
    recon_rel: float
    recon_raw: float
    nuclear: float
    oracle_nuclear: float
    delta: float
    steps: int
    status: str
    wall_s: float

    def as_list(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class SweepConfig:
    n: int = 20
    r: int = 2
    m_rule: str = "3nr"            # "3nr", "nr/4", or an integer string
    planted_kind: str = "lowrank"  # or "decaying"
    d_grid: List[int] = field(default_factory=lambda: [1, 2, 3, 5, 8, 12, 16, 20])
    init_scales: List[float] = field(default_factory=lambda: [1e-4, 1.0])
    step_policies: List[str] = field(default_factory=lambda: ["fixed", "els"])
    eta: float = 1e-3
    eta_max: float = 0.1
    seeds: int = 3
    max_steps: int = 300_000
    residual_rel: float = 1e-5
    seed: int = 0
    out: Optional[str] = None

    def m(self) -> int:
        if self.m_rule == "3nr":
            return 3 * self.n * self.r
        if self.m_rule == "nr/4":
            return max(1, (self.n * self.r) // 4)
        return int(self.m_rule)


@dataclass
class FlowConfig:
    n: int = 20
    r: int = 2
    m_rule: str = "3nr"
    kinds: List[str] = field(
        default_factory=lambda: ["gaussian", "completion-uniform", "completion-powerlaw"]
    )
    alpha: float = 1e-4
    eta: float = 1e-3
    max_steps: int = 250_000
    residual_rel: float = 1e-5
    powerlaw_gamma: float = 1.0
    seed: int = 0
    out: Optional[str] = None

    def m(self) -> int:
        if self.m_rule == "3nr":
            return 3 * self.n * self.r
        if self.m_rule == "nr/4":
            return max(1, (self.n * self.r) // 4)
        return int(self.m_rule)


@dataclass
class GridSearchConfig:
    values_per_entry: int = 10
    interval: List[float] = field(default_factory=lambda: [-1.0, 1.0])
    alphas: List[float] = field(default_factory=lambda: [1e-5, 1e-3, 1.0])
    oracle_tol: float = 1e-7
    oracle_max_iters: int = 60_000
    ode_rel_tol: float = 1e-6
    ode_abs_tol: float = 1e-9
    ode_max_steps: int = 40_000   # bounds the rare crawling trajectory
    residual_rel: float = 1e-6
    t_max: float = 1e6
    workers: int = 1
    seed: int = 0
    out: Optional[str] = None

    def __post_init__(self):
        if self.values_per_entry < 2:
            raise ValueError("values_per_entry must be >= 2")
        if any(a <= 0 for a in self.alphas):
            raise ValueError("init scales must be positive")


def _nan() -> float:
    return float("nan")


def _traj_row(
    experiment: str,
    instance: ProblemInstance,
    solver: str,
    d: int,
    alpha: float,
    eta: float,
    traj: Trajectory,
    oracle_nuc: float,
    seed: int,
) -> ResultRow:
    X = traj.final_X
    nuc = nuclear_norm(X)
    if instance.planted is not None:
        raw = fro(X - instance.planted)
        rel = raw / max(fro(instance.planted), 1e-300)
    else:
        raw = rel = _nan()
    delta = (nuc - oracle_nuc) / oracle_nuc if oracle_nuc > 1e-9 else _nan()
    res = traj.final_residual
    return ResultRow(
        experiment=experiment,
        instance_seed=seed,
        solver=solver,
        d=d,
        alpha=alpha,
        eta=eta,
        objective=res * res,
        residual=res,
        recon_rel=rel,
        recon_raw=raw,
        nuclear=nuc,
        oracle_nuclear=oracle_nuc,
        delta=delta,
        steps=traj.steps,
        status=traj.status,
        wall_s=traj.wall_time,
    )


def _build_instance(kind: str, cfg, seed: int) -> ProblemInstance:
    if kind == "gaussian":
        return gaussian_instance(cfg.n, cfg.m(), cfg.r, getattr(cfg, "planted_kind", "lowrank"), seed)
    if kind == "completion-uniform":
        return completion_instance(cfg.n, cfg.m(), "uniform", cfg.r, "lowrank", seed)
    if kind == "completion-powerlaw":
        return completion_instance(
            cfg.n, cfg.m(), "powerlaw", cfg.r, "lowrank", seed,
            gamma=getattr(cfg, "powerlaw_gamma", 1.0),
        )
    raise ValueError(f"unknown instance kind {kind!r}")


def run_dimension_sweep(cfg: SweepConfig) -> List[ResultRow]:
    """Factored descent across factorization widths, with the projected
    X-space reference, the top-eigenpair initialized runs, and both
    reference solutions."""
    inst = gaussian_instance(cfg.n, cfg.m(), cfg.r, cfg.planted_kind, cfg.seed)
    e = inst.ensemble
    y_norm = float(np.linalg.norm(e.y))
    residual_tol = cfg.residual_rel * y_norm
    orc = oracle_mod.min_nuclear_psd(e)
    orc_nuc = orc.objective if orc.status == oracle_mod.OPTIMAL else _nan()
    rows: List[ResultRow] = []

    # projected descent on the matrix variable, the "unconstrained" limit
    L = float(np.linalg.eigvalsh(e.gram())[-1])
    t0 = time.perf_counter()
    xgd = gd_on_x(
        e, np.zeros((cfg.n, cfg.n)), eta=1.0 / L,
        max_steps=cfg.max_steps, residual_tol=residual_tol, project=True,
    )
    rows.append(
        _traj_row("sweep", inst, "x_gd", cfg.n, 0.0, 1.0 / L, xgd, orc_nuc, cfg.seed)
    )

    frob = oracle_mod.min_frobenius_solution(e)
    rows.append(
        ResultRow(
            experiment="sweep", instance_seed=cfg.seed, solver="min_frobenius",
            d=cfg.n, alpha=0.0, eta=0.0, objective=0.0, residual=0.0,
            recon_rel=fro(frob - inst.planted) / fro(inst.planted),
            recon_raw=fro(frob - inst.planted),
            nuclear=nuclear_norm(frob), oracle_nuclear=orc_nuc,
            delta=(nuclear_norm(frob) - orc_nuc) / orc_nuc if orc_nuc > 1e-9 else _nan(),
            steps=0, status="optimal", wall_s=0.0,
        )
    )

    for d in cfg.d_grid:
        if not 1 <= d <= cfg.n:
            raise ValueError(f"d={d} out of range in d_grid")
        for scale in cfg.init_scales:
            for policy in cfg.step_policies:
                for rep in range(cfg.seeds):
                    U0 = random_factor(cfg.n, d, scale, seed=cfg.seed + 1000 * (rep + 1))
                    gd_cfg = GDConfig(
                        step_policy=policy, eta=cfg.eta, eta_max=cfg.eta_max,
                        init_scale=scale, max_steps=cfg.max_steps,
                        residual_tol=residual_tol, d=d,
                    )
                    traj = factored_gd(e, U0, gd_cfg)
                    tag = f"factored_gd[{policy}]"
                    rows.append(
                        _traj_row("sweep", inst, tag, d, scale,
                                  cfg.eta if policy == "fixed" else cfg.eta_max,
                                  traj, orc_nuc, cfg.seed + 1000 * (rep + 1))
                    )
        if d < cfg.n and xgd.status == CONVERGED:
            # alternate rank-d optimum: descend from the truncated
            # eigenpair factorization of the X-space solution
            U0 = svd_init(xgd.final_X, d)
            gd_cfg = GDConfig(
                step_policy="fixed", eta=cfg.eta, init_scale=max(fro(U0), 1e-12),
                max_steps=cfg.max_steps, residual_tol=residual_tol, d=d,
            )
            traj = factored_gd(e, U0, gd_cfg)
            rows.append(
                _traj_row("sweep", inst, "svd_init", d, fro(U0), cfg.eta,
                          traj, orc_nuc, cfg.seed)
            )

    rows = _sort_rows(rows)
    if cfg.out:
        _write_outputs(cfg.out, rows, cfg, instances=[inst])
    return rows


def run_flow_comparison(cfg: FlowConfig) -> List[ResultRow]:
    """Three approximations of the same matrix flow from one shared
    initialization, next to the X-space reference and the trace oracle."""
    rows: List[ResultRow] = []
    instances = []
    for kind in cfg.kinds:
        inst = _build_instance(kind, cfg, cfg.seed)
        instances.append(inst)
        e = inst.ensemble
        residual_tol = cfg.residual_rel * float(np.linalg.norm(e.y))
        orc = oracle_mod.min_nuclear_psd(e)
        orc_nuc = orc.objective if orc.status == oracle_mod.OPTIMAL else _nan()
        X0 = (cfg.alpha**2 / cfg.n) * np.eye(cfg.n)

        ode_cfg = ODEConfig(residual_tol=residual_tol)
        traj = gradient_flow_ode(e, X0, ode_cfg)
        rows.append(_traj_row(f"flow:{kind}", inst, "ode", cfg.n, cfg.alpha, 0.0,
                              traj, orc_nuc, cfg.seed))

        traj = time_ordered_exp_solve(
            e, X0, eta=cfg.eta, max_steps=cfg.max_steps, residual_tol=residual_tol
        )
        rows.append(_traj_row(f"flow:{kind}", inst, "time_ordered_exp", cfg.n,
                              cfg.alpha, cfg.eta, traj, orc_nuc, cfg.seed))

        U0 = identity_factor(cfg.n, cfg.alpha)
        traj = factored_gd(
            e, U0,
            GDConfig(eta=cfg.eta, init_scale=cfg.alpha,
                     max_steps=cfg.max_steps, residual_tol=residual_tol, d=cfg.n),
        )
        rows.append(_traj_row(f"flow:{kind}", inst, "factored_gd", cfg.n,
                              cfg.alpha, cfg.eta, traj, orc_nuc, cfg.seed))

        L = float(np.linalg.eigvalsh(e.gram())[-1])
        xgd = gd_on_x(e, np.zeros((cfg.n, cfg.n)), eta=1.0 / L,
                      max_steps=cfg.max_steps, residual_tol=residual_tol, project=True)
        rows.append(_traj_row(f"flow:{kind}", inst, "x_gd", cfg.n, 0.0, 1.0 / L,
                              xgd, orc_nuc, cfg.seed))

    rows = _sort_rows(rows)
    if cfg.out:
        _write_outputs(cfg.out, rows, cfg, instances=instances)
    return rows


# ---------------------------------------------------------------------------
# 3x3 completion grid search

_GRID_N = 3
_GRID_M = 4
# the six distinct entries of a symmetric 3x3 matrix
_GRID_POSITIONS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def grid_masks() -> List[tuple]:
    """All C(6, 4) = 15 subsets of the six distinct entries."""
    return list(itertools.combinations(range(len(_GRID_POSITIONS)), _GRID_M))


def _grid_ensemble(mask: Sequence[int], values: Sequence[float]) -> MeasurementEnsemble:
    mats = np.zeros((len(mask), _GRID_N, _GRID_N))
    for i, pos in enumerate(mask):
        a, b = _GRID_POSITIONS[pos]
        if a == b:
            mats[i, a, a] = 1.0
        else:
            mats[i, a, b] = mats[i, b, a] = 0.5
    return MeasurementEnsemble(n=_GRID_N, mats=mats, y=np.asarray(values, dtype=float))


def _grid_worker(args) -> List[dict]:
    """Solve one grid instance at every init scale. Returns plain dicts so
    the rows survive the process boundary cheaply."""
    mask_idx, fill_idx, mask, values, cfg_dict = args
    cfg = GridSearchConfig(**cfg_dict)
    instance_id = mask_idx * 10_000_000 + fill_idx
    out: List[dict] = []
    e = _grid_ensemble(mask, values)
    if oracle_mod._single_entry_infeasible(e):
        return [{"instance_id": instance_id, "feasible": False}]
    orc = oracle_mod.min_nuclear_psd(
        e, tol=cfg.oracle_tol, max_iters=cfg.oracle_max_iters,
        cert_tol=max(TOL.kkt_default, 100 * cfg.oracle_tol),
    )
    if orc.status != oracle_mod.OPTIMAL:
        return [{"instance_id": instance_id, "feasible": False}]
    orc_nuc = orc.objective
    y_norm = float(np.linalg.norm(e.y))
    residual_tol = cfg.residual_rel * (y_norm if y_norm > 0 else 1.0)
    for alpha in cfg.alphas:
        U0 = random_factor(_GRID_N, _GRID_N, alpha, seed=cfg.seed + instance_id)
        X0 = U0 @ U0.T
        # the absolute tolerance must sit far below the initial state
        # scale alpha^2/n, or the escape phase that selects the limit
        # point is integrated at noise level
        abs_tol = min(cfg.ode_abs_tol, cfg.ode_rel_tol * alpha**2 / _GRID_N)
        traj = gradient_flow_ode(
            e, X0,
            ODEConfig(rel_tol=cfg.ode_rel_tol, abs_tol=abs_tol,
                      t_max=cfg.t_max, residual_tol=residual_tol,
                      max_steps=cfg.ode_max_steps),
        )
        nuc = nuclear_norm(traj.final_X)
        delta = (nuc - orc_nuc) / orc_nuc if orc_nuc > 1e-9 else _nan()
        res = traj.final_residual
        out.append({
            "instance_id": instance_id,
            "feasible": True,
            "alpha": alpha,
            "nuclear": nuc,
            "oracle_nuclear": orc_nuc,
            "delta": delta,
            "residual": res,
            "steps": traj.steps,
            "status": traj.status,
            "wall_s": traj.wall_time,
        })
    return out


def run_grid_search(cfg: GridSearchConfig):
    """Enumerate every mask and filling, filter by PSD completability, run
    the flow from every init scale, and report relative sub-optimality.

    Returns (rows, accounting).
    """
    lo, hi = cfg.interval
    values = np.linspace(lo, hi, cfg.values_per_entry)
    masks = grid_masks()
    fillings = list(itertools.product(range(cfg.values_per_entry), repeat=_GRID_M))
    tasks = []
    cfg_dict = {
        f.name: getattr(cfg, f.name)
        for f in dataclasses.fields(cfg)
        if f.name not in ("out", "workers")
    }
    cfg_dict["workers"] = 1
    cfg_dict["out"] = None
    for mask_idx, mask in enumerate(masks):
        for fill_idx, filling in enumerate(fillings):
            vals = [float(values[i]) for i in filling]
            tasks.append((mask_idx, fill_idx, mask, vals, cfg_dict))

    results: List[dict] = []
    if cfg.workers > 1:
        chunk = max(1, len(tasks) // (cfg.workers * 16))
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for batch in pool.map(_grid_worker, tasks, chunksize=chunk):
                results.extend(batch)
    else:
        for t in tasks:
            results.extend(_grid_worker(t))

    rows: List[ResultRow] = []
    feasible_ids = set()
    failed = 0
    degenerate = 0
    for rec in results:
        if not rec["feasible"]:
            continue
        feasible_ids.add(rec["instance_id"])
        if rec["status"] != CONVERGED:
            failed += 1
        if math.isnan(rec["delta"]):
            degenerate += 1
        rows.append(
            ResultRow(
                experiment="grid", instance_seed=rec["instance_id"], solver="ode",
                d=_GRID_N, alpha=rec["alpha"], eta=0.0,
                objective=rec["residual"] ** 2, residual=rec["residual"],
                recon_rel=_nan(), recon_raw=_nan(),
                nuclear=rec["nuclear"], oracle_nuclear=rec["oracle_nuclear"],
                delta=rec["delta"], steps=rec["steps"], status=rec["status"],
                wall_s=rec["wall_s"],
            )
        )
    attempted = len(masks) * len(fillings)
    accounting = {
        "attempted": attempted,
        "feasible": len(feasible_ids),
        "discarded": attempted - len(feasible_ids),
        "runs": len(rows),
        "converged": sum(1 for r in rows if r.status == CONVERGED),
        "failed": failed,
        "degenerate_oracle": degenerate,
    }
    rows = _sort_rows(rows)
    if cfg.out:
        _write_outputs(cfg.out, rows, cfg, accounting=accounting)
    return rows, accounting


# ---------------------------------------------------------------------------
# aggregation and serialization


def _sort_rows(rows: List[ResultRow]) -> List[ResultRow]:
    return sorted(
        rows,
        key=lambda r: (r.experiment, r.instance_seed, r.solver, r.d, r.alpha, r.eta),
    )


def _group_key(r: ResultRow) -> tuple:
    return (r.experiment, r.solver, r.d, r.alpha, r.eta)


def summarize(rows: List[ResultRow]) -> dict:
    """Group means and standard deviations across replicates, a histogram
    of relative sub-optimality, and status accounting. Diverged rows are
    counted but excluded from the means."""
    if not rows:
        raise ValueError("cannot summarize an empty result table")
    groups: dict = {}
    for r in rows:
        groups.setdefault(_group_key(r), []).append(r)

    def stats(vals: List[float]) -> dict:
        ok = [v for v in vals if not math.isnan(v)]
        if not ok:
            return {"mean": None, "std": None, "count": 0}
        return {
            "mean": float(np.mean(ok)),
            "std": float(np.std(ok)),
            "count": len(ok),
        }

    group_out = []
    for key in sorted(groups):
        rs = groups[key]
        live = [r for r in rs if r.status != "diverged"]
        entry = {
            "experiment": key[0],
            "solver": key[1],
            "d": key[2],
            "alpha": key[3],
            "eta": key[4],
            "rows": len(rs),
            "diverged": len(rs) - len(live),
        }
        for col in ("objective", "residual", "recon_rel", "nuclear", "delta"):
            entry[col] = stats([getattr(r, col) for r in live])
        group_out.append(entry)

    deltas = [r.delta for r in rows if not math.isnan(r.delta)]
    hist, _ = np.histogram(deltas, bins=DELTA_BIN_EDGES + [np.inf])
    histogram = {
        "bin_edges": DELTA_BIN_EDGES,
        "counts": hist.tolist(),
        "negative": int(sum(1 for v in deltas if v < 0)),
    }
    return {
        "schema": SCHEMA_VERSION,
        "groups": group_out,
        "delta_histogram": histogram,
        "statuses": {
            s: sum(1 for r in rows if r.status == s)
            for s in sorted({r.status for r in rows})
        },
    }


def format_summary(summary: dict) -> str:
    lines = ["experiment           solver                 d  alpha     nuclear(mean+-std)    recon_rel       delta"]
    for g in summary["groups"]:
        nuc = g["nuclear"]
        rec = g["recon_rel"]
        dlt = g["delta"]
        def _fmt(s, width=10):
            if s["mean"] is None:
                return "-".ljust(width)
            return f"{s['mean']:.4g}".ljust(width)
        lines.append(
            f"{g['experiment']:<20s} {g['solver']:<20s} {g['d']:3d}  "
            f"{g['alpha']:<8.2g} {_fmt(nuc)}+-{(nuc['std'] if nuc['std'] is not None else 0):<8.2g} "
            f"{_fmt(rec)} {_fmt(dlt)}"
        )
    return "\n".join(lines)


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".12g")
    return str(v)


def write_results_csv(path: str, rows: List[ResultRow], cfg=None) -> None:
    if cfg is not None:
        doc = dataclasses.asdict(cfg)
        # execution-only knobs; they never change the scientific payload
        doc.pop("out", None)
        doc.pop("workers", None)
        cfg_json = json.dumps(doc, sort_keys=True)
    else:
        cfg_json = "{}"
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# schema={SCHEMA_VERSION}\n")
        f.write(f"# generated={time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        f.write(f"# config={cfg_json}\n")
        f.write(",".join(CSV_COLUMNS) + "\n")
        for r in rows:
            f.write(",".join(_fmt_cell(v) for v in r.as_list()) + "\n")


def read_results_csv(path: str):
    """Returns (schema_version, column names, list of row dicts)."""
    schema = None
    header = None
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#"):
                if line.startswith("# schema="):
                    schema = int(line.split("=", 1)[1])
                continue
            if not line:
                continue
            parts = line.split(",")
            if header is None:
                header = parts
                continue
            rec = dict(zip(header, parts))
            out.append(rec)
    return schema, header, out


def _write_outputs(out_dir: str, rows, cfg, instances=None, accounting=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_results_csv(os.path.join(out_dir, "results.csv"), rows, cfg)
    summary = summarize(rows) if rows else {"schema": SCHEMA_VERSION, "groups": []}
    if accounting is not None:
        summary["accounting"] = accounting
    summary["config"] = dataclasses.asdict(cfg)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    if instances:
        inst_dir = os.path.join(out_dir, "instances")
        os.makedirs(inst_dir, exist_ok=True)
        for i, inst in enumerate(instances):
            with open(
                os.path.join(inst_dir, f"instance_{i:03d}.json"), "w", encoding="utf-8"
            ) as f:
                json.dump(instance_to_json(inst), f)
