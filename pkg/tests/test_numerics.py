import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from securemimo.numerics import (
    SingularMatrix,
    finite_diff_gradient,
    hermitian_solve,
    make_rng,
    null_space_projector,
    substream,
)

from conftest import crandn


def test_solve_identity_returns_rhs(rng):
    M = crandn(rng, 3, 2)
    np.testing.assert_allclose(hermitian_solve(np.eye(3), M), M, atol=1e-14)


def test_solve_diagonal():
    X = hermitian_solve(np.diag([2.0, 4.0]), np.eye(2))
    np.testing.assert_allclose(X, np.diag([0.5, 0.25]), atol=1e-15)


def test_solve_random_well_conditioned_residual(rng):
    A = crandn(rng, 8, 8) + 4 * np.eye(8)
    B = crandn(rng, 8, 3)
    X = hermitian_solve(A, B)
    assert np.linalg.norm(A @ X - B) / np.linalg.norm(B) < 1e-10


def test_solve_accepts_non_hermitian(rng):
    A = np.triu(crandn(rng, 5, 5)) + 3 * np.eye(5)
    B = crandn(rng, 5, 1)
    X = hermitian_solve(A, B)
    assert np.linalg.norm(A @ X - B) <= 1e-8 * (1 + np.linalg.norm(B))


def test_solve_rejects_singular():
    with pytest.raises(SingularMatrix):
        hermitian_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.eye(2))
    with pytest.raises(SingularMatrix):
        hermitian_solve(np.diag([1.0, 1e-14]), np.eye(2))


def test_solve_rejects_nonconformable():
    with pytest.raises(ValueError):
        hermitian_solve(np.eye(3), np.ones((2, 1)))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 10), k=st.integers(1, 4), seed=st.integers(0, 2**31), cond=st.floats(1.0, 1e6))
def test_solve_residual_bound(n, k, seed, cond):
    r = make_rng(seed)
    Q1, _ = np.linalg.qr(crandn(r, n, n))
    Q2, _ = np.linalg.qr(crandn(r, n, n))
    s = np.geomspace(1.0, 1.0 / cond, n)
    A = Q1 @ np.diag(s) @ Q2
    B = crandn(r, n, k)
    X = hermitian_solve(A, B)
    assert np.linalg.norm(A @ X - B) <= 1e-8 * (1 + np.linalg.norm(B))


def test_null_space_explicit():
    P = null_space_projector(np.array([[1.0, 0.0], [0.0, 0.0]]), 1e-10)
    np.testing.assert_allclose(P, np.diag([0.0, 1.0]), atol=1e-14)


def test_null_space_fallback_lowest_index():
    P = null_space_projector(np.eye(2), 1e-10)
    np.testing.assert_allclose(P, np.diag([1.0, 0.0]), atol=1e-14)


def test_null_space_constructed_kernel(rng):
    # 6x8 with rank 6 has a 2-dimensional kernel
    A = crandn(rng, 6, 6) @ crandn(rng, 6, 8)
    P = null_space_projector(A, 1e-8)
    assert abs(np.trace(P).real - 2.0) < 1e-10
    assert np.linalg.norm(A @ P) < 1e-8


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 8), n=st.integers(1, 8), rank=st.integers(0, 8), seed=st.integers(0, 2**31))
def test_null_space_projector_properties(m, n, rank, seed):
    r = make_rng(seed)
    rank = min(rank, m, n)
    A = crandn(r, m, rank) @ crandn(r, rank, n) if rank else np.zeros((m, n), complex)
    P = null_space_projector(A, 1e-8)
    assert np.linalg.norm(P - P.conj().T) <= 1e-12
    assert np.linalg.norm(P @ P - P) <= 1e-8
    assert np.trace(P).real >= 1 - 1e-10


def test_fd_gradient_real_trace(rng):
    X = crandn(rng, 3, 3)
    G = finite_diff_gradient(lambda Y: np.trace(Y).real, X)
    np.testing.assert_allclose(G, 0.5 * np.eye(3), atol=1e-8)


def test_fd_gradient_frobenius(rng):
    X = crandn(rng, 3, 4)
    G = finite_diff_gradient(lambda Y: np.real(np.trace(Y @ Y.conj().T)), X)
    np.testing.assert_allclose(G, X, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_fd_gradient_quadratic_form(seed):
    r = make_rng(seed)
    X = crandn(r, 4, 4)
    B = crandn(r, 4, 4)
    A = B @ B.conj().T
    G = finite_diff_gradient(lambda Y: np.real(np.trace(Y @ A @ Y.conj().T)), X)
    assert np.linalg.norm(G - X @ A) <= 1e-5 * np.linalg.norm(X @ A)


def test_rng_deterministic_and_independent():
    a = make_rng(3, 1, 2).standard_normal(5)
    b = make_rng(3, 1, 2).standard_normal(5)
    c = make_rng(3, 1, 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    s1 = substream(make_rng(9), 4).standard_normal(3)
    s2 = substream(make_rng(9), 4).standard_normal(3)
    np.testing.assert_array_equal(s1, s2)
