"""Shared numerical tolerances.

Every solver and every test reads from the single frozen record below so
that a tolerance change propagates everywhere at once.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # linear algebra kernels
    eig_reconstruction: float = 1e-10   # ||V L V^T - M||_F / max(1, ||M||_F)
    orthonormality: float = 1e-10       # ||V^T V - I||_F
    psd_floor: float = 1e-10            # eigenvalue slack accepted as "PSD"
    expm_overflow: float = 700.0        # largest eigenvalue exp() can take

    # measurement ensembles
    gram_independence: float = 1e-10    # min/max Gram eigenvalue ratio
    adjointness: float = 1e-10          # <A(X), r> vs <X, A*(r)> slack
    planted_target: float = 1e-12       # |y - A(X*)| at instance build time
    commutation: float = 1e-10          # pairwise ||A_i A_j - A_j A_i||_F

    # iterative solvers
    residual_rel: float = 1e-8          # stopping: ||r|| <= residual_rel * ||y||
    ode_rel: float = 1e-8
    ode_abs: float = 1e-10
    ode_t_max: float = 1e7
    divergence_blowup: float = 1e12     # objective / initial objective
    step_underflow: float = 1e-14       # adaptive dt floor (relative to |t|)

    # oracle / certificates
    admm_tol: float = 1e-8
    admm_max_iters: int = 50_000
    admm_rho: float = 1.0
    admm_stall_window: int = 1000
    admm_stall_improvement: float = 1e-12
    admm_balance_block: int = 200
    admm_balance_freeze: int = 10_000
    kkt_default: float = 1e-5


TOL = Tolerances()
