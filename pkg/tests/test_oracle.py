import itertools

import numpy as np
import pytest

from factorflow.linalg import fro, min_eig, nuclear_norm, sym_part
from factorflow.measurements import (
    MeasurementEnsemble,
    diagonal_ensemble,
    gaussian_ensemble,
    gaussian_instance,
    make_rng,
)
from factorflow.oracle import (
    INFEASIBLE,
    OPTIMAL,
    OracleError,
    kkt_check,
    min_frobenius_solution,
    min_l1_nonneg,
    min_nuclear_psd,
    psd_completable,
)


def entry_mask_ensemble(n, entries, values):
    mats = np.zeros((len(entries), n, n))
    for i, (a, b) in enumerate(entries):
        if a == b:
            mats[i, a, a] = 1.0
        else:
            mats[i, a, b] = mats[i, b, a] = 0.5
    return MeasurementEnsemble(n=n, mats=mats, y=np.asarray(values, dtype=float))


def l1_vertex_oracle(A, y, tol=1e-9):
    """Enumerate candidate supports of all basic feasible points."""
    m, n = A.shape
    best = np.inf
    for k in range(0, m + 1):
        for S in itertools.combinations(range(n), k):
            if k == 0:
                x = np.zeros(n)
            else:
                AS = A[:, list(S)]
                xs, *_ = np.linalg.lstsq(AS, y, rcond=None)
                x = np.zeros(n)
                x[list(S)] = xs
            if np.linalg.norm(A @ x - y) > tol * max(1.0, np.linalg.norm(y)):
                continue
            if np.any(x < -tol):
                continue
            best = min(best, float(np.abs(x).sum()))
    return best


# -- minimum Frobenius solution -----------------------------------------------

def test_min_frobenius_identity_measurement():
    n, c = 5, 0.6
    e = MeasurementEnsemble(n=n, mats=np.eye(n)[None, :, :], y=np.array([c * n]))
    X = min_frobenius_solution(e)
    assert fro(X - c * np.eye(n)) <= 1e-10


def test_min_frobenius_orthonormal_expansion():
    # orthonormal diagonal masks: the solution is the direct expansion
    rows = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    e = diagonal_ensemble(rows, y=np.array([2.0, -3.0]))
    X = min_frobenius_solution(e)
    assert np.allclose(X, np.diag([2.0, -3.0, 0.0]))


def test_min_frobenius_dominates_feasible_perturbations():
    inst = gaussian_instance(6, 8, r=2, seed=0)
    e = inst.ensemble
    X = min_frobenius_solution(e)
    assert np.linalg.norm(e.apply(X) - e.y) <= 1e-10 * max(1.0, np.linalg.norm(e.y))
    rng = np.random.default_rng(1)
    for _ in range(100):
        D = sym_part(rng.standard_normal((6, 6)))
        # project the perturbation onto the measurement null space
        s = np.linalg.solve(e.gram(), e.apply(D))
        D = D - e.adjoint(s)
        assert fro(X) <= fro(X + D) + 1e-9


def test_min_frobenius_lies_in_span():
    inst = gaussian_instance(7, 9, r=2, seed=3)
    e = inst.ensemble
    X = min_frobenius_solution(e)
    s, *_ = np.linalg.lstsq(e.flat.T, X.ravel(), rcond=None)
    assert np.linalg.norm(e.flat.T @ s - X.ravel()) <= 1e-10 * max(1.0, fro(X))


# -- trace minimization over the PSD cone ---------------------------------------

def test_trace_min_single_offdiagonal_entry():
    e = entry_mask_ensemble(2, [(0, 1)], [1.0])
    res = min_nuclear_psd(e, tol=1e-10, max_iters=200_000)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(2.0, abs=1e-8)
    assert np.allclose(res.X, np.ones((2, 2)), atol=1e-8)
    assert res.certificate is not None and res.certificate.passed


def test_trace_min_fixed_diagonal():
    e = entry_mask_ensemble(2, [(0, 0), (1, 1)], [1.0, 1.0])
    res = min_nuclear_psd(e)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(2.0, abs=1e-6)


def test_trace_min_detects_infeasible_diagonal():
    e = entry_mask_ensemble(2, [(0, 0)], [-1.0])
    res = min_nuclear_psd(e)
    assert res.status == INFEASIBLE


def test_trace_min_self_certifies_on_random_instances():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 13))
        m = int(rng.integers(n, min(3 * n, n * (n + 1) // 2)))
        inst = gaussian_instance(n, m, r=min(2, n), seed=seed)
        res = min_nuclear_psd(inst.ensemble)
        assert res.status == OPTIMAL
        assert res.certificate.passed


# -- nonnegative l1 minimization -------------------------------------------------

def test_min_l1_two_column_vertex():
    x = min_l1_nonneg(np.array([[1.0, 2.0]]), np.array([2.0]))
    assert np.allclose(x, [0.0, 1.0], atol=1e-6)


def test_min_l1_identity_system():
    y = np.array([0.3, 0.0, 2.0])
    x = min_l1_nonneg(np.eye(3), y)
    assert np.allclose(x, y, atol=1e-6)


def test_min_l1_degenerate_value():
    x = min_l1_nonneg(np.array([[1.0, 1.0]]), np.array([1.0]))
    assert np.abs(x).sum() == pytest.approx(1.0, abs=1e-6)


def test_min_l1_infeasible_raises_with_status():
    with pytest.raises(OracleError) as err:
        min_l1_nonneg(np.array([[1.0, 2.0]]), np.array([-1.0]))
    assert err.value.status == INFEASIBLE


def test_min_l1_matches_vertex_enumeration():
    rng = np.random.default_rng(5)
    checked = 0
    for seed in range(12):
        m = int(rng.integers(1, 4))
        n = int(rng.integers(m, 7))
        A = np.asarray(make_rng(seed, 9).standard_normal((m, n)))
        x0 = np.abs(make_rng(seed, 10).standard_normal(n))
        y = A @ x0  # feasible by construction
        ref = l1_vertex_oracle(A, y)
        got = min_l1_nonneg(A, y, tol=1e-9, max_iters=200_000)
        assert np.abs(got).sum() == pytest.approx(ref, abs=1e-6)
        checked += 1
    assert checked == 12


# -- KKT certificates -------------------------------------------------------------

def test_kkt_hand_case_passes_exactly():
    e = entry_mask_ensemble(2, [(0, 1)], [1.0])
    cert = kkt_check(np.ones((2, 2)), e, tol=1e-8)
    assert cert.passed
    assert cert.nu[0] == pytest.approx(2.0, abs=1e-8)
    assert cert.max_eig_dual == pytest.approx(1.0, abs=1e-8)
    assert cert.comp_residual <= 1e-10
    assert cert.feas_residual <= 1e-12


def test_kkt_rejects_min_frobenius_point():
    # fixed generic instance where the Frobenius and trace minimizers differ
    inst = gaussian_instance(8, 10, r=2, seed=12)
    X = min_frobenius_solution(inst.ensemble)
    ref = min_nuclear_psd(inst.ensemble)
    assert nuclear_norm(X) > ref.objective + 1e-6
    cert = kkt_check(X, inst.ensemble, tol=1e-5)
    assert not cert.passed
    assert (not cert.passed_psd) or (not cert.passed_dual) or (
        not cert.passed_complementarity
    )


def test_kkt_flags_infeasible_point():
    e = entry_mask_ensemble(2, [(0, 1)], [1.0])
    cert = kkt_check(np.zeros((2, 2)), e, tol=1e-6)
    assert not cert.passed_feasibility
    assert not cert.passed


def test_kkt_never_raises_on_suboptimal_input():
    inst = gaussian_instance(5, 7, r=2, seed=2)
    rng = np.random.default_rng(0)
    X = sym_part(rng.standard_normal((5, 5)))
    cert = kkt_check(X, inst.ensemble, tol=1e-6)
    assert cert.passed in (True, False)


# -- PSD completability filter ------------------------------------------------------

def test_completable_diag_plus_offdiagonal():
    e = entry_mask_ensemble(3, [(0, 0), (1, 1), (2, 2), (0, 1)],
                            [1.0, 1.0, 1.0, 0.5])
    assert psd_completable(e)


def test_not_completable_zero_diagonal_with_coupling():
    e = entry_mask_ensemble(3, [(0, 0), (0, 1), (1, 1), (2, 2)],
                            [0.0, 1.0, 1.0, 1.0])
    assert not psd_completable(e)


def test_completable_all_zero_observations():
    e = entry_mask_ensemble(3, [(0, 0), (0, 1), (1, 2), (2, 2)],
                            [0.0, 0.0, 0.0, 0.0])
    assert psd_completable(e)


def test_not_completable_violated_minor():
    e = entry_mask_ensemble(3, [(0, 0), (1, 1), (0, 1), (2, 2)],
                            [1.0, 1.0, 1.5, 1.0])
    assert not psd_completable(e)
