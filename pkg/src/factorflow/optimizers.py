"""Dynamics on the factored and unfactored matrix variable.

Solvers share one convention: the least squares objective is
``F(X) = ||A(X) - y||_2^2`` over the matrix variable and
``f(U) = F(U U^T)`` over an n x d factor. The factor gradient carries the
constant fixed by finite differences of f (a factor 4 for symmetric
measurement matrices); the plain X-space iteration moves along A*(r)
directly, which rescales time but not limit points.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import integrate
from .linalg import eigh_sym, expm_sym, fro, min_eig, nuclear_norm, psd_project, sym_part
from .measurements import MeasurementEnsemble, make_rng
from .tolerances import TOL

STEP_FIXED = "fixed"
STEP_ELS = "els"  # exact line search, clipped at eta_max

CONVERGED = "converged"
MAX_STEPS = "max_steps"
DIVERGED = "diverged"


@dataclass
class GDConfig:
    """Gradient descent controls for the factored iteration."""

    step_policy: str = STEP_FIXED
    eta: float = 1e-3
    eta_max: float = 0.1
    init_scale: float = 1e-4     # target ||U0||_F
    max_steps: int = 500_000
    residual_tol: Optional[float] = None  # None: TOL.residual_rel * ||y||
    d: int = 0                   # factorization width, 0 means d = n

    def __post_init__(self):
        if self.eta <= 0 or self.eta_max <= 0 or self.init_scale <= 0:
            raise ValueError("step sizes and init scale must be positive")
        if self.step_policy not in (STEP_FIXED, STEP_ELS):
            raise ValueError(f"unknown step policy {self.step_policy!r}")
        if self.residual_tol is not None and self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")


@dataclass
class ODEConfig:
    """Controls for the adaptive gradient-flow integration."""

    rel_tol: float = TOL.ode_rel
    abs_tol: float = TOL.ode_abs
    t_max: float = TOL.ode_t_max
    residual_tol: Optional[float] = None
    max_steps: int = 2_000_000

    def __post_init__(self):
        if min(self.rel_tol, self.abs_tol, self.t_max) <= 0:
            raise ValueError("ODE tolerances and t_max must be positive")
        if self.residual_tol is not None and self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")


@dataclass
class Trajectory:
    """Solver output. History rows are (step, objective, residual, nuclear);
    nuclear norm entries may be NaN between recording strides."""

    final_X: np.ndarray
    final_U: Optional[np.ndarray]
    status: str
    history: List[Tuple[int, float, float, float]] = field(default_factory=list)
    steps: int = 0
    wall_time: float = 0.0
    message: str = ""
    t_final: Optional[float] = None

    @property
    def final_residual(self) -> float:
        return self.history[-1][2] if self.history else float("nan")

    @property
    def final_nuclear(self) -> float:
        return self.history[-1][3] if self.history else float("nan")


def _resolve_tol(residual_tol: Optional[float], y) -> float:
    if y is None:
        raise ValueError("ensemble has no targets")
    if residual_tol is not None:
        return residual_tol
    scale = float(np.linalg.norm(y))
    return TOL.residual_rel * (scale if scale > 0 else 1.0)


def random_factor(n: int, d: int, scale: float, seed: int) -> np.ndarray:
    """Random direction factor with ||U0||_F = scale."""
    G = make_rng(seed, 4).standard_normal((n, d))
    return G * (scale / fro(G))


def identity_factor(n: int, scale: float) -> np.ndarray:
    """Scaled identity factor with ||U0||_F = scale, so U0 U0^T is a
    multiple of the identity."""
    return np.eye(n) * (scale / np.sqrt(n))


def factor_gradient(U: np.ndarray, e: MeasurementEnsemble) -> np.ndarray:
    """Gradient of f(U) = ||A(U U^T) - y||^2.

    Equals 4 A*(r) U for symmetric measurement matrices; the constant is
    pinned by central finite differences of f.
    """
    U = np.asarray(U, dtype=float)
    if U.shape[0] != e.n:
        raise ValueError(f"factor has {U.shape[0]} rows, ensemble needs {e.n}")
    if e.y is None:
        raise ValueError("ensemble has no targets")
    r = e.flat @ (U @ U.T).ravel() - e.y
    S = (e.flat.T @ r).reshape(e.n, e.n)
    return 4.0 * (S @ U)


def exact_line_search_step(
    U: np.ndarray, G: np.ndarray, e: MeasurementEnsemble, eta_max: float
) -> float:
    """Minimize the quartic phi(eta) = ||A((U - eta G)(U - eta G)^T) - y||^2
    over [0, eta_max] by solving the cubic stationarity condition."""
    if fro(G) == 0.0:
        raise ValueError("line search needs a nonzero direction")
    r0 = e.flat @ (U @ U.T).ravel() - e.y
    cross = G @ U.T
    b = e.flat @ (cross + cross.T).ravel()
    c = e.flat @ (G @ G.T).ravel()
    # phi(eta) = ||r0 - eta b + eta^2 c||^2
    p1 = -2.0 * float(r0 @ b)
    p2 = float(b @ b) + 2.0 * float(r0 @ c)
    p3 = -2.0 * float(b @ c)
    p4 = float(c @ c)

    def phi(eta: float) -> float:
        v = r0 - eta * b + eta * eta * c
        return float(v @ v)

    candidates = [0.0, float(eta_max)]
    coeffs = np.array([4.0 * p4, 3.0 * p3, 2.0 * p2, p1])
    lead = np.max(np.abs(coeffs))
    if lead > 0:
        nz = np.nonzero(np.abs(coeffs) > 1e-14 * lead)[0]
        if nz.size:
            roots = np.roots(coeffs[nz[0]:])
            for z in roots:
                if abs(z.imag) < 1e-9 * max(1.0, abs(z.real)):
                    eta = float(z.real)
                    if 0.0 < eta < eta_max:
                        candidates.append(eta)
    return min(candidates, key=phi)


class _Recorder:
    """Strided (step, objective, residual, nuclear) history."""

    def __init__(self, stride: int, nuclear_stride: int = 1):
        self.stride = max(1, stride)
        self.nuclear_stride = max(1, nuclear_stride)
        self.rows: List[Tuple[int, float, float, float]] = []
        self._count = 0

    def record(self, step: int, obj: float, res: float, X: np.ndarray, force=False):
        if step % self.stride != 0 and not force:
            return
        if not np.isfinite(obj):
            return  # divergence is reported through the status, history stays finite
        if (self._count % self.nuclear_stride == 0 or force) and np.all(
            np.isfinite(X)
        ):
            nuc = nuclear_norm(X)
        else:
            nuc = float("nan")
        self._count += 1
        self.rows.append((step, float(obj), float(res), nuc))


def factored_gd(
    e: MeasurementEnsemble, U0: np.ndarray, cfg: GDConfig
) -> Trajectory:
    """Gradient descent on the n x d factor.

    Stops when the residual 2-norm reaches the tolerance or the step
    budget runs out; non-finite iterates or objective blow-up mark the
    trajectory diverged.
    """
    t0 = time.perf_counter()
    U = np.asarray(U0, dtype=float).copy()
    if fro(U) == 0.0:
        raise ValueError("U0 must be nonzero")
    tol = _resolve_tol(cfg.residual_tol, e.y)
    rec = _Recorder(stride=max(1, cfg.max_steps // 512))
    flat, y, n = e.flat, e.y, e.n

    status, message, step = MAX_STEPS, "", 0
    obj0 = None
    for step in range(cfg.max_steps + 1):
        X = U @ U.T
        r = flat @ X.ravel() - y
        obj = float(r @ r)
        res = float(np.sqrt(obj))
        if obj0 is None:
            obj0 = max(obj, 1e-300)
        rec.record(step, obj, res, X)
        if not np.isfinite(obj) or obj > TOL.divergence_blowup * obj0:
            status, message = DIVERGED, f"objective blew up at step {step}"
            break
        if res <= tol:
            status = CONVERGED
            break
        if step == cfg.max_steps:
            break
        S = (flat.T @ r).reshape(n, n)
        G = 4.0 * (S @ U)
        if cfg.step_policy == STEP_ELS:
            eta = exact_line_search_step(U, G, e, cfg.eta_max)
        else:
            eta = cfg.eta
        U = U - eta * G

    X = sym_part(U @ U.T)
    r = flat @ X.ravel() - y
    rec.record(step, float(r @ r), float(np.linalg.norm(r)), X, force=True)
    return Trajectory(
        final_X=X,
        final_U=U,
        status=status,
        history=rec.rows,
        steps=step,
        wall_time=time.perf_counter() - t0,
        message=message,
    )


def gd_on_x(
    e: MeasurementEnsemble,
    X0: np.ndarray,
    eta: float,
    max_steps: int = 100_000,
    residual_tol: Optional[float] = None,
    project: bool = False,
) -> Trajectory:
    """Gradient descent directly on the matrix variable: X <- X - eta A*(r),
    optionally followed by projection onto the PSD cone.

    Without projection and X0 = 0 every iterate stays in span{A_i}, so the
    zero-residual limit is the minimum Frobenius norm solution.
    """
    t0 = time.perf_counter()
    X = sym_part(np.asarray(X0, dtype=float))
    tol = _resolve_tol(residual_tol, e.y)
    rec = _Recorder(stride=max(1, max_steps // 512))
    flat, y, n = e.flat, e.y, e.n

    status, message, step = MAX_STEPS, "", 0
    obj0 = None
    for step in range(max_steps + 1):
        r = flat @ X.ravel() - y
        obj = float(r @ r)
        res = float(np.sqrt(obj))
        if obj0 is None:
            obj0 = max(obj, 1e-300)
        rec.record(step, obj, res, X)
        if not np.isfinite(obj) or obj > TOL.divergence_blowup * obj0:
            status, message = DIVERGED, f"objective blew up at step {step}"
            break
        if res <= tol:
            status = CONVERGED
            break
        if step == max_steps:
            break
        X = X - eta * (flat.T @ r).reshape(n, n)
        if project:
            X = psd_project(X)
        else:
            X = sym_part(X)

    r = flat @ X.ravel() - y
    rec.record(step, float(r @ r), float(np.linalg.norm(r)), X, force=True)
    return Trajectory(
        final_X=X,
        final_U=None,
        status=status,
        history=rec.rows,
        steps=step,
        wall_time=time.perf_counter() - t0,
        message=message,
    )


def gradient_flow_ode(
    e: MeasurementEnsemble, X0: np.ndarray, cfg: ODEConfig
) -> Trajectory:
    """Integrate the factored gradient flow on the matrix variable,
    dX/dt = -(S X + X S) with S = A*(A(X) - y).

    Uses the embedded Dormand-Prince pair; the state is re-symmetrized
    after every accepted step to kill asymmetry drift.
    """
    t0 = time.perf_counter()
    X0 = sym_part(np.asarray(X0, dtype=float))
    lo = min_eig(X0)
    if lo < -max(10 * cfg.abs_tol, TOL.psd_floor * max(1.0, fro(X0))):
        raise ValueError(f"X0 must be PSD (min eigenvalue {lo:.3g})")
    tol = _resolve_tol(cfg.residual_tol, e.y)
    flat, y, n = e.flat, e.y, e.n
    rec = _Recorder(stride=1, nuclear_stride=16)

    def rhs(t: float, x: np.ndarray) -> np.ndarray:
        X = x.reshape(n, n)
        r = flat @ x - y
        S = (flat.T @ r).reshape(n, n)
        M = S @ X
        return -(M + M.T).ravel()

    state = {"steps": 0, "converged": False, "diverged": False, "obj0": None}

    def on_accept(t: float, x: np.ndarray):
        X = sym_part(x.reshape(n, n))
        x = X.ravel()
        r = flat @ x - y
        obj = float(r @ r)
        res = float(np.sqrt(obj))
        state["steps"] += 1
        if state["obj0"] is None:
            state["obj0"] = max(obj, 1e-300)
        rec.record(state["steps"], obj, res, X)
        if not np.isfinite(obj) or obj > TOL.divergence_blowup * state["obj0"]:
            state["diverged"] = True
            return x, True
        if res <= tol:
            state["converged"] = True
            return x, True
        return x, False

    x0 = X0.ravel()
    r0 = flat @ x0 - y
    rec.record(0, float(r0 @ r0), float(np.linalg.norm(r0)), X0, force=True)
    if float(np.linalg.norm(r0)) <= tol:
        return Trajectory(
            final_X=X0, final_U=None, status=CONVERGED, history=rec.rows,
            steps=0, wall_time=time.perf_counter() - t0, t_final=0.0,
        )

    t, x, istatus, n_acc = integrate.dopri45(
        rhs, x0, t_max=cfg.t_max, rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol,
        max_steps=cfg.max_steps, on_accept=on_accept,
    )

    X = sym_part(x.reshape(n, n))
    message = ""
    if state["diverged"]:
        status, message = DIVERGED, "objective blew up"
    elif state["converged"]:
        status = CONVERGED
    elif istatus == integrate.STATUS_UNDERFLOW:
        status, message = DIVERGED, f"step size underflow at t={t:.6g}"
    elif istatus == integrate.STATUS_NONFINITE:
        status, message = DIVERGED, f"non-finite state at t={t:.6g}"
    else:
        status = MAX_STEPS  # t_max or step budget exhausted

    lo = min_eig(X)
    if lo < -10 * cfg.abs_tol:
        message = (message + "; " if message else "") + (
            f"PSD floor violated (min eigenvalue {lo:.3g})"
        )
    elif lo < 0:
        X = psd_project(X)
    r = flat @ X.ravel() - y
    rec.record(n_acc, float(r @ r), float(np.linalg.norm(r)), X, force=True)
    return Trajectory(
        final_X=X,
        final_U=None,
        status=status,
        history=rec.rows,
        steps=n_acc,
        wall_time=time.perf_counter() - t0,
        message=message,
        t_final=t,
    )


def time_ordered_exp_step(
    X: np.ndarray, r: np.ndarray, e: MeasurementEnsemble, eta: float
) -> np.ndarray:
    """One congruence step: E X E with E = exp(-eta A*(r)).

    Keeps PSD iterates exactly PSD, unlike a linearized gradient step.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    E = expm_sym(-eta * e.adjoint(r))
    return sym_part(E @ X @ E)


def time_ordered_exp_solve(
    e: MeasurementEnsemble,
    X0: np.ndarray,
    eta: float,
    max_steps: int = 500_000,
    residual_tol: Optional[float] = None,
) -> Trajectory:
    """Iterate the congruence step with the running residual, approximating
    the product-integral solution of the matrix flow."""
    t0 = time.perf_counter()
    X = sym_part(np.asarray(X0, dtype=float))
    tol = _resolve_tol(residual_tol, e.y)
    rec = _Recorder(stride=max(1, max_steps // 512))
    flat, y = e.flat, e.y

    status, message, step = MAX_STEPS, "", 0
    obj0 = None
    for step in range(max_steps + 1):
        r = flat @ X.ravel() - y
        obj = float(r @ r)
        res = float(np.sqrt(obj))
        if obj0 is None:
            obj0 = max(obj, 1e-300)
        rec.record(step, obj, res, X)
        if not np.isfinite(obj) or obj > TOL.divergence_blowup * obj0:
            status, message = DIVERGED, f"objective blew up at step {step}"
            break
        if res <= tol:
            status = CONVERGED
            break
        if step == max_steps:
            break
        try:
            X = time_ordered_exp_step(X, r, e, eta)
        except OverflowError as exc:
            status, message = DIVERGED, str(exc)
            break

    r = flat @ X.ravel() - y
    rec.record(step, float(r @ r), float(np.linalg.norm(r)), X, force=True)
    return Trajectory(
        final_X=X,
        final_U=None,
        status=status,
        history=rec.rows,
        steps=step,
        wall_time=time.perf_counter() - t0,
        message=message,
    )


def closed_form_commutative_path(
    e: MeasurementEnsemble, X0: np.ndarray, s: np.ndarray
) -> np.ndarray:
    """Closed-form state exp(A*(s)) X0 exp(A*(s)) for commuting ensembles."""
    worst = 0.0
    for i in range(e.m):
        for j in range(i + 1, e.m):
            C = e.mats[i] @ e.mats[j] - e.mats[j] @ e.mats[i]
            worst = max(worst, fro(C))
    if worst > TOL.commutation:
        raise ValueError(
            f"ensemble does not commute (max commutator norm {worst:.3g})"
        )
    E = expm_sym(e.adjoint(s))
    return sym_part(E @ sym_part(X0) @ E)


def flow_limit_schedule(
    e: MeasurementEnsemble,
    alphas: Sequence[float],
    cfg: Optional[ODEConfig] = None,
    X_init: Optional[np.ndarray] = None,
) -> List[Tuple[float, Trajectory]]:
    """Probe the small-initialization limit along a decreasing scale
    schedule: integrate the flow from alpha * X_init for each alpha and
    report the sequence of trajectories. No extrapolation is performed;
    the limit is probed, not computed."""
    cfg = cfg or ODEConfig()
    X_init = np.eye(e.n) if X_init is None else sym_part(np.asarray(X_init))
    out = []
    for alpha in alphas:
        if alpha <= 0:
            raise ValueError("initialization scales must be positive")
        out.append((float(alpha), gradient_flow_ode(e, alpha * X_init, cfg)))
    return out


def svd_init(X_gd: np.ndarray, d: int) -> np.ndarray:
    """Factor built from the top-d eigenpairs of a (near) PSD matrix, so
    U0 U0^T is its best rank-d PSD approximation."""
    X_gd = sym_part(np.asarray(X_gd, dtype=float))
    n = X_gd.shape[0]
    if not 1 <= d <= n:
        raise ValueError(f"d={d} out of range for n={n}")
    w, V = eigh_sym(X_gd)
    top = w[:d]
    floor = -TOL.psd_floor * max(1.0, abs(w[0]))
    if top[-1] < floor:
        raise ValueError(
            f"top-{d} eigenvalues include {top[-1]:.3g} < 0; input not PSD"
        )
    return V[:, :d] * np.sqrt(np.maximum(top, 0.0))
