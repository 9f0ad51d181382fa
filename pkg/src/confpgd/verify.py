"""Built-in invariant suites behind ``confpgd verify``.

Every check compares a library path against an independent oracle
(quadrature, dense Kronecker products, direct solves) or against a closed
form.  ``fast`` finishes in a few seconds; ``full`` adds the randomized
100-trial suites and the 32x32 convergence runs.
"""
from __future__ import annotations

import time
import traceback

import numpy as np
import scipy.linalg as sla
from scipy.special import roots_jacobi

from . import assembly, linalg, lowrank, pgd, problems, spaces

_CHECKS: list[tuple[str, str, object]] = []
_FAULTS: set[str] = set()


def check(name: str, level: str = "fast"):
    def deco(fn):
        _CHECKS.append((name, level, fn))
        return fn
    return deco


def registered_checks(level: str = "full") -> list[str]:
    """Names of the checks run at ``level``, in execution order."""
    return [name for name, lvl, _ in _CHECKS if level == "full" or lvl == "fast"]


def _require(cond, msg):
    if not cond:
        raise AssertionError(msg)


def gauss_stiffness(interval, order: int = 64) -> np.ndarray:
    """Weighted P1 stiffness by per-element 64-point quadrature (oracle).

    Gauss-Legendre on every element; the element touching x = 0, where the
    weight is not smooth, uses Gauss-Jacobi with the weight's exponent.
    """
    w = 2.0 * (1.0 - interval.alpha)
    xi, wi = np.polynomial.legendre.leggauss(order)
    tj, wj = roots_jacobi(order, 0.0, w)
    nodes = interval.mesh.nodes
    n_el = nodes.size - 1
    k = np.zeros(n_el)
    for e in range(n_el):
        a, b = nodes[e], nodes[e + 1]
        half = 0.5 * (b - a)
        if a == 0.0 and w > 0.0:
            # x**w = half**w * (1 + t)**w on [0, b]
            k[e] = half ** (w + 1.0) * np.sum(wj) / (b - a) ** 2
        else:
            x = a + half * (xi + 1.0)
            k[e] = half * np.sum(wi * x ** w) / (b - a) ** 2
    full = np.zeros((n_el + 1, n_el + 1))
    for e in range(n_el):
        full[e:e + 2, e:e + 2] += k[e] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return full[1:-1, 1:-1]


def classical_stiffness(h: float, n_dofs: int) -> np.ndarray:
    return (2.0 * np.eye(n_dofs) - np.eye(n_dofs, k=1) - np.eye(n_dofs, k=-1)) / h


def _pair(alpha, n, disc="fem"):
    grading = 1.0 if disc == "grunwald" else None
    return assembly.assemble_pair(spaces.make_interval(alpha, n, grading=grading), disc)


# -- spaces ----------------------------------------------------------------

@check("spaces.meshes")
def _meshes():
    np.testing.assert_allclose(spaces.make_uniform_mesh(2.0, 4).nodes, [0, 0.5, 1, 1.5, 2])
    np.testing.assert_allclose(spaces.make_graded_mesh(1.0, 3, 3.0).nodes, [0, 1 / 27, 8 / 27, 1], rtol=1e-12)
    for n in (2, 5, 17):
        np.testing.assert_allclose(spaces.make_graded_mesh(1.0, n, 1.0).nodes,
                                   spaces.make_uniform_mesh(1.0, n).nodes, rtol=1e-15)


@check("spaces.conformable_limit")
def _conformable_limit():
    f = lambda x: x * x
    for alpha in (0.3, 0.5, 0.9):
        x = 0.7
        exact = spaces.conformable_derivative_pointwise(2 * x, x, alpha)
        errs = [abs((f(x + h * x ** (1 - alpha)) - f(x)) / h - exact) for h in (1e-3, 1e-4, 1e-5)]
        slopes = np.diff(np.log10(errs))
        _require(np.all(np.abs(slopes + 1.0) < 0.05), f"difference quotient not first order: {slopes}")
    _require(spaces.conformable_derivative_pointwise(3.0, 2.5, 1.0) == 3.0, "alpha = 1 is not classical")


# -- assembly --------------------------------------------------------------

@check("assembly.symmetry")
def _symmetry():
    for disc in ("fem", "grunwald"):
        ops = _pair(0.5, 16, disc)
        A, M = ops.dense()
        if "symmetry" in _FAULTS:
            A = A.copy()
            A[0, 1] += 1e-3
        for name, X in (("A", A), ("M", M)):
            _require(linalg.is_symmetric(X), f"{disc} {name} is not symmetric")


@check("assembly.classical_stiffness")
def _classical():
    for n in (2, 4, 9, 33):
        A, _ = _pair(1.0, n).dense()
        np.testing.assert_allclose(A, classical_stiffness(1.0 / n, n - 1), rtol=0, atol=1e-14 * n)


@check("assembly.quadrature_oracle")
def _quadrature():
    for alpha in (0.3, 0.5, 0.7, 0.9):
        for n in (4, 16):
            iv = spaces.make_interval(alpha, n)
            A, _ = assembly.assemble_fem_pair(iv).dense()
            ref = gauss_stiffness(iv)
            mask = ref != 0
            rel = np.max(np.abs(A[mask] - ref[mask]) / np.abs(ref[mask]))
            _require(rel <= 1e-10, f"alpha={alpha} n={n}: relative deviation {rel:.2e}")


@check("assembly.weighted_poincare")
def _poincare():
    for disc in ("fem", "grunwald"):
        for alpha in (0.3, 0.5, 0.8):
            A, M = _pair(alpha, 24, disc).dense()
            lam = sla.eigh(A, M, eigvals_only=True)[0]
            _require(lam > 0, f"{disc} alpha={alpha}: lambda_min = {lam}")


@check("assembly.grunwald_consistency")
def _grunwald_consistency():
    alpha = 0.5
    errs = []
    for n in (32, 64, 128):
        iv = spaces.make_interval(alpha, n, grading=1.0)
        G = assembly.assemble_grunwald_operator(iv)
        x = iv.mesh.interior
        # the last row differences into the Dirichlet value at x = 1
        err = np.abs(G.matvec(x * x)[:-1] - x ** (1 - alpha) * 2 * x)
        errs.append(err[1:].max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    _require(np.all(ratios > 1.8), f"Grünwald derivative not first order: error ratios {ratios}")


@check("assembly.grunwald_classical")
def _grunwald_classical():
    for n in (2, 5, 33):
        iv = spaces.make_interval(1.0, n)
        A_g = assembly.assemble_pair(iv, "grunwald").dense()[0]
        _require(np.allclose(A_g, classical_stiffness(1.0 / n, n - 1), rtol=1e-13, atol=1e-13 * n),
                 f"alpha = 1 Grünwald energy differs from the P1 stiffness at n={n}")


@check("assembly.spd_random", level="full")
def _spd_random():
    rng = np.random.default_rng(7)
    for disc in ("fem", "grunwald"):
        A, M = _pair(0.5, 8, disc).dense()
        for _ in range(100):
            v = rng.standard_normal(7)
            _require(v @ A @ v > 0 and v @ M @ v > 0, f"{disc} pair not positive definite")


# -- linalg ----------------------------------------------------------------

@check("linalg.spd_solve_vs_cholesky")
def _spd_solve():
    rng = np.random.default_rng(3)
    A, _ = _pair(0.5, 9).dense()
    b = rng.standard_normal(8)
    x = linalg.spd_solve(A, b, method="cg")
    ref = sla.cho_solve(sla.cho_factor(A), b)
    np.testing.assert_allclose(x, ref, rtol=1e-8, atol=1e-12)


@check("linalg.toeplitz_fft")
def _toeplitz():
    rng = np.random.default_rng(11)
    for n in (3, 17, 64, 255):
        c, r = rng.standard_normal((2, n))
        r[0] = c[0]
        v = rng.standard_normal(n)
        ref = sla.toeplitz(c, r) @ v
        out = linalg.toeplitz_matvec(c, v, r)
        rel = np.linalg.norm(out - ref) / np.linalg.norm(ref)
        _require(rel <= 1e-12, f"n={n}: relative deviation {rel:.2e}")


@check("linalg.toeplitz_random", level="full")
def _toeplitz_random():
    rng = np.random.default_rng(12)
    for _ in range(100):
        c, r = rng.standard_normal((2, 64))
        r[0] = c[0]
        v = rng.standard_normal(64)
        ref = sla.toeplitz(c, r) @ v
        rel = np.linalg.norm(linalg.toeplitz_matvec(c, v, r) - ref) / np.linalg.norm(ref)
        _require(rel <= 1e-12, f"relative deviation {rel:.2e}")


@check("linalg.kronecker_sum")
def _kron():
    rng = np.random.default_rng(5)
    ox, oy = _pair(0.4, 5), _pair(0.7, 5)
    K = linalg.KroneckerSumOperator.from_pairs(ox, oy)
    U = rng.standard_normal(K.shape)
    np.testing.assert_allclose(K.apply(U).ravel(), K.to_dense() @ U.ravel(), rtol=1e-12, atol=1e-12)
    E = rng.standard_normal(K.shape)
    lhs = linalg.dual_norm_squared(K, K.apply(E))
    _require(abs(lhs - K.energy(E)) <= 1e-8 * K.energy(E), "dual norm of K e differs from the energy of e")


@check("linalg.jacobi_iterations", level="full")
def _jacobi():
    A = _pair(0.5, 129).A
    rng = np.random.default_rng(21)
    wins = 0
    for _ in range(100):
        b = rng.standard_normal(A.shape[0])
        _, pj, _ = linalg.pcg(lambda v: A @ v, b, diag=A.diagonal(), tol=1e-10, maxiter=5000)
        _, pn, _ = linalg.pcg(lambda v: A @ v, b, tol=1e-10, maxiter=5000)
        wins += pj <= pn
    _require(wins >= 90, f"Jacobi helped on only {wins}/100 right-hand sides")


# -- lowrank ---------------------------------------------------------------

@check("lowrank.energy_oracle")
def _energy():
    rng = np.random.default_rng(9)
    ox, oy = _pair(0.3, 9), _pair(0.6, 9)
    K = linalg.KroneckerSumOperator.from_pairs(ox, oy)
    u = lowrank.SeparableFunction(ox, oy, [lowrank.RankOneMode(*rng.standard_normal((2, 8)), s)
                                           for s in (1.0, -0.3, 2.0)])
    ref = K.energy(u.to_matrix())
    _require(abs(u.energy() - ref) <= 1e-10 * ref, "mode-pairwise energy differs from dense oracle")


@check("lowrank.residual_contraction")
def _contraction():
    rng = np.random.default_rng(10)
    ox, oy = _pair(0.5, 4), _pair(0.5, 4)
    K = linalg.KroneckerSumOperator.from_pairs(ox, oy)
    load = assembly.LoadFactors([tuple(rng.standard_normal((2, 3)))])
    u = lowrank.SeparableFunction(ox, oy, [lowrank.RankOneMode(*rng.standard_normal((2, 3)), 0.7)])
    r = lowrank.ResidualContraction(load, u)
    R = load.to_matrix() - K.apply(u.to_matrix())
    for _ in range(20):
        p, q = rng.standard_normal((2, 3))
        _require(abs(r.apply(p, q) - p @ R @ q) <= 1e-12 * max(1, abs(p @ R @ q)), "residual_apply mismatch")
        _require(abs(p @ r.partial_x(q) - r.apply(p, q)) <= 1e-12 * max(1, abs(r.apply(p, q))),
                 "residual_partial_x inconsistent")


# -- pgd -------------------------------------------------------------------

@check("pgd.rank_one_exact")
def _rank_one():
    spec = problems.ProblemSpec(n_x=16, n_y=16, load=problems.LoadSpec(kind="manufactured"))
    res = pgd.greedy_solve(problems.build_problem(spec), als_cfg=pgd.AlsConfig(rq_rel_improvement_tol=1e-14),
                           diagnostics=pgd.Diagnostics(theta=True, dual_norm=True))
    _require(res.n_modes == 1, f"expected one mode, got {res.n_modes}")
    ratio = np.sqrt(res.initial_energy_error_sq / max(res.records[0].energy_error_sq, 1e-300))
    _require(ratio >= 1e8, f"dual norm reduced only by {ratio:.3e}")
    _require(res.records[0].sweeps <= 10, "ALS needed more than 10 sweeps")


@check("pgd.dense_equivalence")
def _dense_equivalence():
    for disc in ("fem", "grunwald"):
        for kind in ("poisson2d", "spacetime"):
            spec = problems.ProblemSpec(kind=kind, n_x=6, n_y=6, n_t=6, discretization=disc)
            prob = problems.build_problem(spec)
            res = pgd.greedy_solve(prob, pgd.GreedyConfig(eps=1e-12, max_modes=200, absolute_floor=1e-30))
            K = prob.kron()
            ref = problems.reference_solution_dense(prob.ops_x, prob.ops_y, prob.load)
            err = np.sqrt(K.energy(res.solution.to_matrix() - ref) / K.energy(ref))
            _require(err <= 1e-6, f"{disc}/{kind}: relative energy error {err:.2e}")


@check("pgd.energy_identity_32", level="full")
def _identity():
    for alpha in (0.3, 0.5, 0.8):
        spec = problems.ProblemSpec(alpha_x=alpha, alpha_y=alpha, n_x=32, n_y=32)
        res = pgd.greedy_solve(problems.build_problem(spec),
                               diagnostics=pgd.Diagnostics(theta=True, dual_norm=True))
        errs = [res.initial_energy_error_sq] + [r.energy_error_sq for r in res.records]
        for i, rec in enumerate(res.records):
            gap = abs(rec.delta_E - (errs[i] - errs[i + 1]))
            _require(gap <= 1e-8 * errs[0], f"alpha={alpha} step {rec.N}: identity gap {gap:.2e}")
        _require(res.als_violations == 0, f"alpha={alpha}: ALS quotient decreased")


def verify(level: str = "fast", inject_fault: str | None = None, out=print) -> int:
    """Run the suites for ``level``; returns 0 when every check passes."""
    if level not in ("fast", "full"):
        raise ValueError(f"unknown level {level!r}")
    _FAULTS.clear()
    if inject_fault:
        _FAULTS.add(inject_fault)
    first_failure = None
    t0 = time.perf_counter()
    try:
        for name, lvl, fn in _CHECKS:
            if lvl == "full" and level != "full":
                continue
            t = time.perf_counter()
            try:
                fn()
            except Exception as exc:  # report every failure, name the first
                msg = str(exc).strip().splitlines()[0] if str(exc).strip() else traceback.format_exc(limit=1)
                out(f"FAIL {name}: {msg}")
                first_failure = first_failure or name
            else:
                out(f"ok   {name} ({time.perf_counter() - t:.2f}s)")
    finally:
        _FAULTS.clear()
    total = time.perf_counter() - t0
    if first_failure:
        out(f"verify {level}: FAILED, first failing invariant: {first_failure} ({total:.1f}s)")
        return 1
    out(f"verify {level}: all checks passed ({total:.1f}s)")
    return 0
