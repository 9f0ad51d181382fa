import time

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from confpgd.linalg import (ContractError, ConvergenceError, KroneckerSumOperator, ToeplitzFFT, dual_norm_squared,
                            kron_sum_matvec, pcg, spd_solve, toeplitz_matvec)

from conftest import fem_pair, grunwald_pair, random_spd_pair


def test_trivial_solves():
    np.testing.assert_allclose(spd_solve(np.array([[2.0]]), np.array([4.0])), [2.0])
    S = np.array([[2.0, -1.0], [-1.0, 2.0]])
    for method in ("auto", "cholesky", "cg"):
        np.testing.assert_allclose(spd_solve(S, np.array([1.0, 1.0]), method=method), [1.0, 1.0])
    np.testing.assert_allclose(spd_solve(sp.csr_matrix(S), np.array([1.0, 1.0]), method="banded"), [1.0, 1.0])


@pytest.mark.parametrize("method", ["auto", "cg", "banded", "cholesky"])
def test_fem_solve_matches_cholesky_oracle(method, rng):
    A = fem_pair(0.5, 9).A
    Ad = A.toarray()
    oracle = sla.cho_factor(Ad)
    for _ in range(5):
        b = rng.standard_normal(8)
        x, info = spd_solve(A, b, method=method, return_info=True)
        np.testing.assert_allclose(x, sla.cho_solve(oracle, b), rtol=1e-8, atol=1e-12)
        assert np.linalg.norm(Ad @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_auto_dispatch():
    A = fem_pair(0.5, 200).A
    _, info = spd_solve(A, np.ones(199), return_info=True)
    assert info.method == "banded"
    dense = np.eye(10) * 3
    assert spd_solve(dense, np.ones(10), return_info=True)[1].method == "cholesky"
    big = sp.random(100, 100, density=0.05, random_state=1)
    big = (big + big.T + 20 * sp.eye(100)).tocsr()
    x, info = spd_solve(big, np.ones(100), return_info=True)
    assert info.method == "cg" and info.relative_residual <= 1e-10


def test_cg_is_deterministic(rng):
    A = fem_pair(0.3, 120).A
    b = rng.standard_normal(119)
    x1 = spd_solve(A, b, method="cg")
    x2 = spd_solve(A, b, method="cg")
    np.testing.assert_array_equal(x1, x2)


def test_refuses_asymmetric():
    with pytest.raises(ContractError):
        spd_solve(np.array([[2.0, 1.0], [0.0, 2.0]]), np.ones(2))


def test_refuses_indefinite():
    with pytest.raises(ContractError):
        spd_solve(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))
    with pytest.raises(ContractError):
        spd_solve(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])), np.ones(2))


def test_shape_mismatch():
    with pytest.raises(ContractError):
        spd_solve(np.eye(3), np.ones(2))


def test_nonconvergence_carries_residual():
    A = fem_pair(0.5, 400).A
    with pytest.raises(ConvergenceError) as info:
        spd_solve(A, np.ones(399), method="cg", maxiter=3)
    assert info.value.iterations == 3
    assert info.value.residual > 1e-10


def test_jacobi_reduces_iterations():
    A = fem_pair(0.5, 129).A
    rng = np.random.default_rng(0)
    wins = 0
    for _ in range(100):
        b = rng.standard_normal(128)
        _, with_jacobi, _ = pcg(lambda v: A @ v, b, diag=A.diagonal(), tol=1e-10, maxiter=5000)
        _, plain, _ = pcg(lambda v: A @ v, b, tol=1e-10, maxiter=5000)
        wins += with_jacobi <= plain
    assert wins >= 90


def test_toeplitz_examples():
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(toeplitz_matvec([1.0, 0, 0], v), v, atol=1e-15)
    np.testing.assert_allclose(toeplitz_matvec([2.0, -2.0, 0.0], v), [2.0, 2.0, 2.0], atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3, 17, 64, 255])
def test_toeplitz_matches_direct(n, rng):
    for _ in range(100 if n == 64 else 5):
        c, r = rng.standard_normal((2, n))
        r[0] = c[0]
        v = rng.standard_normal(n)
        ref = sla.toeplitz(c, r) @ v
        out = toeplitz_matvec(c, v, r)
        assert np.linalg.norm(out - ref) <= 1e-12 * np.linalg.norm(ref)


def test_toeplitz_lower_default(rng):
    c = rng.standard_normal(9)
    v = rng.standard_normal(9)
    np.testing.assert_allclose(toeplitz_matvec(c, v), np.tril(sla.toeplitz(c)) @ v, rtol=1e-12, atol=1e-13)


def test_kron_scalar():
    K = KroneckerSumOperator(np.array([[2.0]]), np.array([[3.0]]), np.array([[5.0]]), np.array([[7.0]]))
    np.testing.assert_allclose(kron_sum_matvec(K, np.array([[1.5]])), [[(2 * 7 + 3 * 5) * 1.5]])


def test_kron_rank_one_identity(rng):
    ox, oy = random_spd_pair(rng, 4), random_spd_pair(rng, 5)
    K = KroneckerSumOperator.from_pairs(ox, oy)
    p, q = rng.standard_normal(4), rng.standard_normal(5)
    expected = np.outer(ox.A @ p, oy.M @ q) + np.outer(ox.M @ p, oy.A @ q)
    np.testing.assert_allclose(K.apply(np.outer(p, q)), expected, rtol=1e-12)


def test_kron_matches_dense_oracle(rng):
    ox, oy = random_spd_pair(rng, 4), random_spd_pair(rng, 4)
    K = KroneckerSumOperator.from_pairs(ox, oy)
    oracle = np.kron(ox.A, oy.M) + np.kron(ox.M, oy.A)
    U = rng.standard_normal((4, 4))
    np.testing.assert_allclose(K.apply(U).ravel(), oracle @ U.ravel(), rtol=1e-12)
    np.testing.assert_allclose(K.to_dense(), oracle)


def test_kron_sparse_operands_and_guard():
    ox, oy = fem_pair(0.5, 70), grunwald_pair(0.5, 70)
    K = KroneckerSumOperator.from_pairs(ox, oy)
    with pytest.raises(ContractError):
        K.to_dense()
    with pytest.raises(ContractError):
        K.apply(np.zeros((3, 3)))


def test_dual_norm_examples(rng):
    K = KroneckerSumOperator(*(np.array([[v]]) for v in (2.0, 1.0, 3.0, 1.0)))
    assert dual_norm_squared(K, np.array([[2.0]])) == pytest.approx(4.0 / 5.0)
    ox, oy = random_spd_pair(rng, 3), random_spd_pair(rng, 3)
    K = KroneckerSumOperator.from_pairs(ox, oy)
    assert dual_norm_squared(K, np.zeros((3, 3))) == 0.0
    R = rng.standard_normal((3, 3))
    ref = R.ravel() @ np.linalg.solve(K.to_dense(), R.ravel())
    assert dual_norm_squared(K, R) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("method", ["auto", "cg", "eig"])
def test_dual_norm_energy_identity(method, rng):
    ox, oy = fem_pair(0.5, 20), fem_pair(0.7, 17)
    K = KroneckerSumOperator.from_pairs(ox, oy)
    E = rng.standard_normal(K.shape)
    assert dual_norm_squared(K, K.apply(E), method=method) == pytest.approx(K.energy(E), rel=1e-8)


def test_cached_spectrum_matches_oneshot(rng):
    c, r, v = rng.standard_normal((3, 33))
    T = ToeplitzFFT(c, r)
    np.testing.assert_allclose(T @ v, toeplitz_matvec(c, v, r), rtol=1e-13, atol=1e-13)
    with pytest.raises(ContractError):
        T.matvec(np.ones(4))


def test_fft_matvec_time_is_subquadratic(rng):
    ops = {n: (ToeplitzFFT(rng.standard_normal(n)), rng.standard_normal(n)) for n in (8192, 16384)}
    best = dict.fromkeys(ops, np.inf)
    for _ in range(30):
        for n, (T, v) in ops.items():
            t = time.perf_counter()
            for _ in range(10):
                T.matvec(v)
            best[n] = min(best[n], time.perf_counter() - t)
    assert best[16384] / best[8192] <= 3.0
