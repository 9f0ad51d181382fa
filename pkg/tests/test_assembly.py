import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from confpgd.assembly import (LoadFactors, StencilChoice, assemble_fem_pair, assemble_pair,
                              assemble_grunwald_operator, assemble_load_factor, grunwald_energy_pair,
                              read_matrix_market, write_matrix_market)
from confpgd.linalg import is_symmetric
from confpgd.spaces import DomainParameterError, make_interval
from confpgd.verify import classical_stiffness, gauss_stiffness

from conftest import dense


def test_classical_stiffness_alpha_one():
    A, M = assemble_fem_pair(make_interval(1.0, 4)).dense()
    expected = np.array([[8, -4, 0], [-4, 8, -4], [0, -4, 8]], dtype=float)
    np.testing.assert_allclose(A, expected, rtol=0, atol=1e-14)


def test_single_dof_fractional_example():
    ops = assemble_fem_pair(make_interval(0.5, 2, grading=1.0))
    A, M = ops.dense()
    assert ops.structure_tag == "tridiagonal"
    assert A[0, 0] == pytest.approx(2.0, rel=1e-15)
    assert M[0, 0] == pytest.approx(1.0 / 3.0, rel=1e-15)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7, 0.9])
@pytest.mark.parametrize("n", [4, 16])
@pytest.mark.parametrize("grading", [1.0, 2.0])
def test_closed_form_matches_quadrature(alpha, n, grading):
    iv = make_interval(alpha, n, grading=grading)
    A, _ = assemble_fem_pair(iv).dense()
    ref = gauss_stiffness(iv)
    mask = ref != 0
    np.testing.assert_allclose(A[mask], ref[mask], rtol=1e-10)
    assert np.all(A[~mask] == 0)


def test_plain_gauss_legendre_matches_away_from_origin():
    # elements not touching x = 0 carry a smooth weight
    iv = make_interval(0.7, 8)
    A, _ = assemble_fem_pair(iv).dense()
    xi, wi = np.polynomial.legendre.leggauss(64)
    x0, x1, x2 = iv.mesh.nodes[1:4]
    def elem(a, b):
        x = a + 0.5 * (b - a) * (xi + 1)
        return 0.5 * (b - a) * np.sum(wi * x ** 0.6) / (b - a) ** 2
    assert A[0, 1] == pytest.approx(-elem(x0, x1), rel=1e-12)
    assert A[1, 1] == pytest.approx(elem(x0, x1) + elem(x1, x2), rel=1e-12)


@pytest.mark.parametrize("n", [3, 8, 33])
def test_alpha_one_reproduces_classical_matrix(n):
    A, _ = assemble_fem_pair(make_interval(1.0, n)).dense()
    ref = classical_stiffness(1.0 / n, n - 1)
    assert np.max(np.abs(A - ref)) <= 1e-14 * np.max(np.abs(ref))


@pytest.mark.parametrize("alpha,grading", [(0.3, 2.0), (0.6, 1.0), (1.0, 1.0)])
def test_mass_row_sums_are_hat_integrals(alpha, grading):
    iv = make_interval(alpha, 7, grading=grading)
    _, M = assemble_fem_pair(iv).dense()
    h = iv.mesh.h
    hat = 0.5 * (h[:-1] + h[1:])
    # rows next to a Dirichlet end lose their coupling h/6 to the boundary node
    boundary = np.zeros_like(hat)
    boundary[0] += h[0] / 6
    boundary[-1] += h[-1] / 6
    np.testing.assert_allclose(M.sum(axis=1) + boundary, hat, rtol=1e-14)
    np.testing.assert_allclose(M.sum(axis=1)[1:-1], hat[1:-1], rtol=1e-14)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.9])
def test_pairs_are_spd(alpha, rng):
    for ops in (assemble_fem_pair(make_interval(alpha, 8)),
                grunwald_energy_pair(assemble_grunwald_operator(make_interval(alpha, 8, grading=1.0)),
                                     make_interval(alpha, 8, grading=1.0))):
        A, M = ops.dense()
        assert is_symmetric(A) and is_symmetric(M)
        V = rng.standard_normal((100, 7))
        assert np.all(np.einsum("ij,jk,ik->i", V, A, V) > 0)
        assert np.all(np.einsum("ij,jk,ik->i", V, M, V) > 0)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
def test_weighted_poincare(alpha):
    A, M = assemble_fem_pair(make_interval(alpha, 32)).dense()
    assert sla.eigh(A, M, eigvals_only=True)[0] > 0


def test_grunwald_classical_single_dof():
    iv = make_interval(1.0, 2)
    G = assemble_grunwald_operator(iv)
    np.testing.assert_allclose(G.W, np.eye(2))
    # differences into the unknown from x_0 = 0 and out of it to x_2 = 1
    np.testing.assert_allclose(G.G, [[2.0], [-2.0]])
    ops = grunwald_energy_pair(G, iv)
    # h * (2^2 + 2^2) equals the P1 stiffness 2 / h
    assert dense(ops.A)[0, 0] == pytest.approx(4.0)
    assert ops.structure_tag == "toeplitz-product"


@pytest.mark.parametrize("n", [2, 3, 5, 17])
def test_classical_grunwald_energy_equals_p1_stiffness(n):
    iv = make_interval(1.0, n)
    grunwald = dense(assemble_pair(iv, "grunwald").A)
    fem = dense(assemble_pair(iv, "fem").A)
    np.testing.assert_allclose(grunwald, fem, rtol=1e-13, atol=1e-13 * n)


def test_grunwald_fractional_example():
    iv = make_interval(0.5, 4, L=2.0, grading=1.0)
    G = assemble_grunwald_operator(iv)
    np.testing.assert_allclose(G.weights, [0.5 ** 0.5, 1.0, 1.5 ** 0.5, 2.0 ** 0.5], rtol=1e-15)
    np.testing.assert_allclose(G.T, [[2, 0, 0], [-2, 2, 0], [0, -2, 2], [0, 0, -2]])
    np.testing.assert_allclose(G.G, G.W @ G.T, rtol=1e-15)


@pytest.mark.parametrize("stencil", [StencilChoice(), StencilChoice("grunwald", 5),
                                     StencilChoice("grunwald", 4, shift=1)])
def test_stencil_is_toeplitz(stencil):
    G = assemble_grunwald_operator(make_interval(0.6, 12, grading=1.0), stencil)
    T = G.T
    np.testing.assert_array_equal(T[1:, 1:], T[:-1, :-1])


def test_grunwald_first_order_consistency():
    alpha = 0.4
    errs = []
    for n in (16, 32, 64, 128):
        iv = make_interval(alpha, n, grading=1.0)
        G = assemble_grunwald_operator(iv)
        x = iv.mesh.interior
        err = np.abs(G.matvec(x * x)[:-1] - 2 * x ** (2 - alpha))
        # C*h bound on nodes away from the boundary (x*x does not vanish at x = 1,
        # so the last row, which differences into the Dirichlet value, is skipped)
        assert err[1:].max() <= 2.5 * iv.mesh.h[0]
        errs.append(err[1:].max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 0.9)


def test_grunwald_reproduces_weight_on_linear_function():
    alpha = 0.5
    iv = make_interval(alpha, 8, grading=1.0)
    G = assemble_grunwald_operator(iv)
    x = iv.mesh.interior
    # backward difference of x is exact (x_0 = 0)
    np.testing.assert_allclose(G.matvec(x)[:-1], x ** (1 - alpha), rtol=1e-13)


def test_grunwald_energy_scaling_and_symmetry(rng):
    iv = make_interval(0.5, 8, grading=1.0)
    G = assemble_grunwald_operator(iv)
    ops = grunwald_energy_pair(G, iv)
    A = dense(ops.A)
    np.testing.assert_allclose(A, G.h * G.G.T @ G.G, rtol=1e-14)
    np.testing.assert_array_equal(A, A.T)
    for _ in range(100):
        v = rng.standard_normal(7)
        assert v @ A @ v > 0


def test_fractional_grunwald_poincare_constant_is_stable():
    lams = []
    for n in (32, 64, 128):
        A, M = assemble_pair(make_interval(0.5, n, grading=1.0), "grunwald").dense()
        lams.append(sla.eigh(A, M, eigvals_only=True, subset_by_index=[0, 0])[0])
    assert min(lams) > 0
    assert (max(lams) - min(lams)) / min(lams) < 0.25


def test_rmatvec_is_transpose(rng):
    for stencil in (StencilChoice(), StencilChoice("grunwald", 5), StencilChoice("grunwald", 3, shift=1)):
        G = assemble_grunwald_operator(make_interval(0.7, 20, grading=1.0), stencil)
        assert G.G.shape == (20, 19)
        v, w = rng.standard_normal(19), rng.standard_normal(20)
        np.testing.assert_allclose(G.matvec(v), G.G @ v, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(G.rmatvec(w), G.G.T @ w, rtol=1e-12, atol=1e-12)


def test_long_grunwald_stencil_pair_is_dense_spd():
    iv = make_interval(0.5, 10, grading=1.0)
    ops = grunwald_energy_pair(assemble_grunwald_operator(iv, StencilChoice("grunwald", 6)), iv)
    A = dense(ops.A)
    assert not sp.issparse(ops.A)
    np.testing.assert_allclose(A, A.T, atol=1e-12)
    assert np.linalg.eigvalsh(A)[0] > 0


def test_grunwald_rejects_graded_mesh():
    with pytest.raises(DomainParameterError):
        assemble_grunwald_operator(make_interval(0.5, 8, grading=2.0))


@pytest.mark.parametrize("bad", [dict(kind="other"), dict(length=1), dict(kind="backward", length=3)])
def test_stencil_validation(bad):
    with pytest.raises(DomainParameterError):
        StencilChoice(**bad)


def test_load_factor_examples():
    iv = make_interval(1.0, 4)
    np.testing.assert_allclose(assemble_load_factor(iv, lambda x: np.ones_like(x)), 0.25, rtol=1e-15)
    np.testing.assert_array_equal(assemble_load_factor(iv, lambda x: 0 * x), 0.0)
    # int_0^1 x phi(x) dx for the hat at 0.5 is 1/4 (sympy)
    f = assemble_load_factor(make_interval(0.5, 2, grading=1.0), lambda x: x)
    assert f[0] == pytest.approx(0.25, rel=1e-15)


def test_load_factor_on_graded_mesh_matches_exact_moments():
    iv = make_interval(0.3, 9)
    x = iv.mesh.nodes
    f = assemble_load_factor(iv, lambda s: s ** 2)
    # exact int s^2 phi_i for piecewise-linear hats
    def piece(a, b, up):
        from numpy.polynomial import polynomial as P
        lin = np.array([-a, 1.0]) / (b - a) if up else np.array([b, -1.0]) / (b - a)
        poly = P.polymul([0, 0, 1.0], lin)
        anti = P.polyint(poly)
        return P.polyval(b, anti) - P.polyval(a, anti)
    exact = [piece(x[i - 1], x[i], True) + piece(x[i], x[i + 1], False) for i in range(1, x.size - 1)]
    np.testing.assert_allclose(f, exact, rtol=1e-13)


def test_load_factors_contract():
    load = LoadFactors([([1.0, 2.0], [3.0]), ([0.5, 0.0], [1.0])])
    assert load.shape == (2, 1)
    assert load.apply(np.array([1.0, 1.0]), np.array([2.0])) == pytest.approx(19.0)
    np.testing.assert_allclose(load.to_matrix(), [[3.5], [6.0]])
    with pytest.raises(ValueError):
        LoadFactors([])
    with pytest.raises(ValueError):
        LoadFactors([([1.0], [1.0]), ([1.0, 2.0], [1.0])])


def test_matrix_market_roundtrip(tmp_path):
    ops = assemble_fem_pair(make_interval(0.5, 6))
    path = tmp_path / "A.mtx"
    write_matrix_market(path, ops.A, "test")
    lines = path.read_text().splitlines()
    entries = [tuple(map(int, ln.split()[:2])) for ln in lines[3:]]
    assert entries == sorted(entries)
    np.testing.assert_array_equal(read_matrix_market(path).toarray(), dense(ops.A))
