"""The two model problems: fractional Poisson on the unit square and a
space-time problem with a classical H^1_0(0, T) time coordinate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import (LoadFactors, OperatorPair, StencilChoice, assemble_load_factor,
                       assemble_pair)
from .linalg import DENSE_KRON_LIMIT, ContractError, KroneckerSumOperator, spd_solve
from .spaces import (DomainParameterError, FractionalInterval, FractionalOrder, default_grading,
                     make_graded_mesh)

KINDS = ("poisson2d", "spacetime")
DISCRETIZATIONS = ("fem", "grunwald")
LOAD_KINDS = ("constant", "polynomial", "manufactured")
REFERENCE_LIMIT = 10_000


@dataclass(frozen=True)
class LoadSpec:
    """Closed load catalog.

    ``constant``: ``f = value``.  ``polynomial``: ``f = value * x**a * y**b``
    with ``(a, b) = exponents`` (for space-time the first variable is t).
    ``manufactured``: discrete rank-one solution ``p* q*^T`` with factors
    ``p_star``/``q_star`` given as node values or ``"sine"`` (``sin(pi s/L)``).
    """

    kind: str = "constant"
    value: float = 1.0
    exponents: tuple[float, float] = (0.0, 0.0)
    p_star: object = "sine"
    q_star: object = "sine"

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise DomainParameterError(f"load kind must be one of {LOAD_KINDS}, got {self.kind!r}")
        if len(self.exponents) != 2 or min(self.exponents) < 0:
            raise DomainParameterError("polynomial exponents must be two nonnegative numbers")


@dataclass(frozen=True)
class ProblemSpec:
    """Model problem description.

    For ``poisson2d`` the axes are (x, y) on ``(0, L_x) x (0, L_y)``.  For
    ``spacetime`` the first tensor factor is time on ``(0, T)`` with order 1
    and ``n_t`` elements, the second is space with ``alpha_x``, ``n_x``, ``L_x``.
    """

    kind: str = "poisson2d"
    alpha_x: float = 0.5
    alpha_y: float = 0.5
    n_x: int = 32
    n_y: int = 32
    n_t: int = 32
    L_x: float = 1.0
    L_y: float = 1.0
    T: float = 1.0
    grading_x: float | None = None
    grading_y: float | None = None
    grading_t: float | None = None
    discretization: str = "fem"
    stencil: StencilChoice = field(default_factory=StencilChoice)
    load: LoadSpec = field(default_factory=LoadSpec)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainParameterError(f"problem kind must be one of {KINDS}, got {self.kind!r}")
        if self.discretization not in DISCRETIZATIONS:
            raise DomainParameterError(f"discretization must be one of {DISCRETIZATIONS}")
        FractionalOrder(self.alpha_x)
        FractionalOrder(self.alpha_y)

    def axes(self) -> list[tuple[str, float, int, float, float | None]]:
        """``(label, alpha, n, L, grading)`` for the two tensor factors."""
        if self.kind == "poisson2d":
            return [("x", self.alpha_x, self.n_x, self.L_x, self.grading_x),
                    ("y", self.alpha_y, self.n_y, self.L_y, self.grading_y)]
        return [("t", 1.0, self.n_t, self.T, self.grading_t),
                ("x", self.alpha_x, self.n_x, self.L_x, self.grading_x)]


@dataclass(eq=False)
class Problem:
    ops_x: OperatorPair
    ops_y: OperatorPair
    load: LoadFactors
    spec: ProblemSpec | None = None

    def kron(self) -> KroneckerSumOperator:
        return KroneckerSumOperator.from_pairs(self.ops_x, self.ops_y)


def _interval(label, alpha, n, L, grading, discretization) -> FractionalInterval:
    if discretization == "grunwald":
        if grading is not None and grading != 1.0:
            raise DomainParameterError("the Grünwald discretization requires a uniform mesh (grading = 1)")
        gamma = 1.0
    else:
        gamma = default_grading(alpha) if grading is None else grading
    return FractionalInterval(FractionalOrder(alpha), make_graded_mesh(L, n, gamma), label)


def _star(choice, interval: FractionalInterval) -> np.ndarray:
    if isinstance(choice, str):
        if choice != "sine":
            raise DomainParameterError(f"unknown manufactured factor {choice!r}")
        x = interval.mesh.interior
        return np.sin(np.pi * x / interval.mesh.length)
    v = np.asarray(choice, dtype=float)
    if v.shape != (interval.n_dofs,):
        raise DomainParameterError(
            f"manufactured factor for {interval.label} needs {interval.n_dofs} values, got {v.size}")
    return v


def manufactured_rank_one_load(ops_x: OperatorPair, ops_y: OperatorPair, p_star, q_star) -> LoadFactors:
    """Load whose discrete solution is exactly ``p* q*^T``."""
    p = np.asarray(p_star, dtype=float)
    q = np.asarray(q_star, dtype=float)
    if not p.any() or not q.any():
        raise ContractError("manufactured factors must be nonzero")
    return LoadFactors([(ops_x.A @ p, ops_y.M @ q), (ops_x.M @ p, ops_y.A @ q)])


def build_load(spec: LoadSpec, ops_x: OperatorPair, ops_y: OperatorPair) -> LoadFactors:
    ix, iy = ops_x.interval, ops_y.interval
    if spec.kind == "manufactured":
        return manufactured_rank_one_load(ops_x, ops_y, _star(spec.p_star, ix), _star(spec.q_star, iy))
    a, b = spec.exponents if spec.kind == "polynomial" else (0.0, 0.0)
    fx = assemble_load_factor(ix, lambda s: s ** a)
    fy = assemble_load_factor(iy, lambda s: s ** b)
    return LoadFactors([(spec.value * fx, fy)])


def build_problem(spec: ProblemSpec) -> Problem:
    (lx, ax, nx, Lx, gx), (ly, ay, ny, Ly, gy) = spec.axes()
    ix = _interval(lx, ax, nx, Lx, gx, spec.discretization)
    iy = _interval(ly, ay, ny, Ly, gy, spec.discretization)
    ops_x = assemble_pair(ix, spec.discretization, spec.stencil)
    ops_y = assemble_pair(iy, spec.discretization, spec.stencil)
    return Problem(ops_x, ops_y, build_load(spec.load, ops_x, ops_y), spec)


def reference_solution_dense(ops_x: OperatorPair, ops_y: OperatorPair, load: LoadFactors,
                             tol: float = 1e-13) -> np.ndarray:
    """Discrete Galerkin solution ``K^{-1} vec(F)`` as an ``n_x x n_y`` matrix."""
    K = KroneckerSumOperator.from_pairs(ops_x, ops_y)
    if K.size > REFERENCE_LIMIT:
        raise ContractError(f"reference solve limited to {REFERENCE_LIMIT} unknowns, got {K.size}")
    F = load.to_matrix()
    if not F.any():
        return np.zeros(K.shape)
    if K.size <= DENSE_KRON_LIMIT:
        return spd_solve(K.to_dense(), F.ravel(), method="cholesky").reshape(K.shape)
    return K.solve(F, tol=tol, method="cg")
