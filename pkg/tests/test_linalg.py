import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorflow.linalg import (
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
from factorflow.tolerances import TOL


def random_sym(n: int, seed: int, scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return sym_part(rng.standard_normal((n, n))) * scale


def expm_series(M: np.ndarray, terms: int = 60) -> np.ndarray:
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


# -- construction ------------------------------------------------------------

def test_sym_mat_symmetrizes():
    M = sym_mat([[1.0, 2.0], [0.0, 3.0]])
    assert np.array_equal(M, M.T)
    assert M[0, 1] == 1.0


def test_sym_mat_rejects_nonfinite():
    with pytest.raises(ValueError):
        sym_mat([[np.nan, 0.0], [0.0, 1.0]])


def test_sym_mat_rejects_nonsquare():
    with pytest.raises(ValueError):
        sym_mat(np.zeros((2, 3)))


# -- eigendecomposition ------------------------------------------------------

def test_eigh_identity():
    d = eigh_sym(np.eye(3))
    assert np.allclose(d.eigvals, [1.0, 1.0, 1.0])


def test_eigh_diagonal_sorted_descending():
    d = eigh_sym(np.diag([3.0, 1.0]))
    assert np.allclose(d.eigvals, [3.0, 1.0])
    assert np.allclose(np.abs(d.eigvecs), np.eye(2))


def test_eigh_offdiagonal_pair():
    # characteristic polynomial x^2 - 1 = 0
    d = eigh_sym(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(d.eigvals, [1.0, -1.0], atol=1e-12)


def test_eigh_rejects_nonfinite():
    with pytest.raises(ValueError):
        eigh_sym(np.array([[np.inf, 0.0], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10**6))
def test_eigh_reconstruction_and_orthonormality(n, seed):
    M = random_sym(n, seed, scale=3.0)
    w, V = eigh_sym(M)
    assert np.all(np.diff(w) <= 1e-12)
    assert fro((V * w) @ V.T - M) <= TOL.eig_reconstruction * max(1.0, fro(M))
    assert fro(V.T @ V - np.eye(n)) <= TOL.orthonormality


# -- matrix exponential ------------------------------------------------------

def test_expm_zero():
    assert np.allclose(expm_sym(np.zeros((2, 2))), np.eye(2))


def test_expm_diagonal():
    assert np.allclose(expm_sym(np.diag([np.log(2.0), 0.0])), np.diag([2.0, 1.0]))


def test_expm_offdiagonal_matches_series():
    M = np.array([[0.0, 0.3], [0.3, 0.0]])
    E = expm_sym(M)
    assert np.max(np.abs(E - expm_series(M))) <= 1e-12
    assert np.allclose(E, [[np.cosh(0.3), np.sinh(0.3)], [np.sinh(0.3), np.cosh(0.3)]])


def test_expm_overflow_rejected():
    with pytest.raises(OverflowError):
        expm_sym(np.diag([800.0, 0.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10**6))
def test_expm_commutes_with_argument(n, seed):
    M = random_sym(n, seed)
    E = expm_sym(M)
    bound = 1e-9 * max(fro(M) * fro(E), 1e-12)
    assert fro(E @ M - M @ E) <= bound


# -- PSD projection ----------------------------------------------------------

def test_psd_project_clamps_negative():
    assert np.allclose(psd_project(np.diag([2.0, -1.0])), np.diag([2.0, 0.0]))


def test_psd_project_hand_case():
    P = psd_project(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(P, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10**6))
def test_psd_project_idempotent_and_psd(n, seed):
    M = random_sym(n, seed)
    P = psd_project(M)
    assert min_eig(P) >= -TOL.psd_floor
    assert fro(psd_project(P) - P) <= 1e-10 * max(1.0, fro(P))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(0, 10**6))
def test_psd_project_fixes_psd_inputs(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    M = sym_part(B @ B.T)
    assert fro(psd_project(M) - M) <= 1e-10 * max(1.0, fro(M))


def test_psd_project_is_frobenius_nearest():
    # compare against a dense search over the top-eigenvalue cone boundary
    M = random_sym(4, 7)
    P = psd_project(M)
    rng = np.random.default_rng(1)
    for _ in range(200):
        B = rng.standard_normal((4, 4))
        Q = sym_part(B @ B.T) * rng.uniform(0, 2)
        assert fro(M - P) <= fro(M - Q) + 1e-9


# -- nuclear norm ------------------------------------------------------------

def test_nuclear_identity():
    assert nuclear_norm(np.eye(3)) == pytest.approx(3.0)


def test_nuclear_mixed_signs():
    assert nuclear_norm(np.diag([2.0, -1.0])) == pytest.approx(3.0)


def test_nuclear_rank_one():
    u = np.array([1.2, -1.6])  # norm 2
    assert nuclear_norm(np.outer(u, u)) == pytest.approx(4.0)


def test_singular_values_rectangular():
    M = np.array([[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
    assert np.allclose(singular_values(M), [4.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(0, 10**6))
def test_nuclear_matches_abs_eigvals(n, seed):
    M = random_sym(n, seed)
    w, _ = eigh_sym(M)
    ref = np.sum(np.abs(w))
    assert nuclear_norm(M) == pytest.approx(ref, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10**6))
def test_nuclear_equals_trace_on_psd(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    M = sym_part(B @ B.T)
    assert nuclear_norm(M) == pytest.approx(float(np.trace(M)), rel=1e-9)
