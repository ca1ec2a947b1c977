"""Gradient flow on matrix factorizations and its implicit nuclear-norm bias."""

from .linalg import (
    EigenDecomp,
    eigh_sym,
    expm_sym,
    fro,
    min_eig,
    nuclear_norm,
    psd_project,
    singular_values,
    sym_mat,
    sym_part,
)
from .measurements import (
    MeasurementEnsemble,
    ProblemInstance,
    completion_ensemble,
    completion_instance,
    diagonal_ensemble,
    diagonal_instance,
    embed_asymmetric,
    gaussian_ensemble,
    gaussian_instance,
    instance_from_json,
    instance_to_json,
    load_instance,
    make_rng,
    planted_psd,
    save_instance,
)
from .optimizers import (
    GDConfig,
    ODEConfig,
    Trajectory,
    closed_form_commutative_path,
    exact_line_search_step,
    factor_gradient,
    factored_gd,
    flow_limit_schedule,
    gd_on_x,
    gradient_flow_ode,
    identity_factor,
    random_factor,
    svd_init,
    time_ordered_exp_solve,
    time_ordered_exp_step,
)
from .oracle import (
    KKTCertificate,
    OracleError,
    OracleResult,
    kkt_check,
    min_frobenius_solution,
    min_l1_nonneg,
    min_nuclear_psd,
    psd_completable,
)
from .tolerances import TOL, Tolerances

__version__ = "0.1.0"
