"""Adaptive embedded Runge-Kutta integrator (Dormand-Prince 5(4)).

Plain explicit stepper over a flat float64 state vector, with PI-free
step control: accept when the weighted RMS of the embedded error estimate
is at most one, then rescale the step by 0.9 * err**(-1/5) clamped to
[0.2, 5.0]. The FSAL stage is not exploited; the accept hook may modify
the state (used to re-symmetrize matrix trajectories), which would
invalidate a cached first stage anyway.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th and embedded 4th order weights
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

STATUS_T_MAX = "t_max"
STATUS_STOPPED = "stopped"
STATUS_UNDERFLOW = "underflow"
STATUS_STEP_BUDGET = "step_budget"
STATUS_NONFINITE = "nonfinite"


def _initial_step(f0: np.ndarray, x0: np.ndarray, rel_tol: float, abs_tol: float) -> float:
    sc = abs_tol + rel_tol * np.abs(x0)
    d0 = float(np.sqrt(np.mean((x0 / sc) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / sc) ** 2)))
    if d0 < 1e-5 or d1 < 1e-5:
        return 1e-6
    return 0.01 * d0 / d1


def dopri45(
    f: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    t_max: float,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-10,
    t0: float = 0.0,
    max_steps: int = 2_000_000,
    on_accept: Optional[Callable[[float, np.ndarray], tuple]] = None,
):
    """Integrate dx/dt = f(t, x) from t0 until t_max.

    ``on_accept(t, x)`` runs after every accepted step and returns
    ``(x, stop)``; returning ``stop=True`` ends the solve with status
    "stopped". Returns ``(t, x, status, n_accepted)``.
    """
    t = float(t0)
    x = np.asarray(x0, dtype=float).copy()
    fx = f(t, x)
    h = _initial_step(fx, x, rel_tol, abs_tol)
    h = min(h, t_max - t)
    n_accepted = 0
    k = np.empty((7, x.size))

    for _ in range(max_steps):
        if t >= t_max:
            return t, x, STATUS_T_MAX, n_accepted
        h = min(h, t_max - t)
        if h < 1e-14 * max(1.0, abs(t)):
            return t, x, STATUS_UNDERFLOW, n_accepted

        k[0] = fx
        for s in range(1, 7):
            xs = x + h * (_A[s] @ k[:s])
            k[s] = f(t + _C[s] * h, xs)
        x_new = x + h * (_B5 @ k)
        err_vec = h * (_E @ k)

        if not np.all(np.isfinite(x_new)):
            return t, x, STATUS_NONFINITE, n_accepted

        sc = abs_tol + rel_tol * np.maximum(np.abs(x), np.abs(x_new))
        err = float(np.sqrt(np.mean((err_vec / sc) ** 2)))

        if err <= 1.0:
            t += h
            x = x_new
            n_accepted += 1
            if on_accept is not None:
                x, stop = on_accept(t, x)
                if stop:
                    return t, x, STATUS_STOPPED, n_accepted
            fx = f(t, x)
            h *= min(5.0, max(0.2, 0.9 * err ** -0.2 if err > 0 else 5.0))
        else:
            h *= max(0.2, 0.9 * err ** -0.2)

    return t, x, STATUS_STEP_BUDGET, n_accepted
