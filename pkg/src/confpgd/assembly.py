"""Stiffness/mass pairs and load vectors for the two 1-D discretizations.

Weighted P1 finite elements use the exact antiderivative of the weight
``x**(2(1-alpha))``; the Grünwald path factors the discrete conformable
derivative as ``G = W @ T`` with ``W`` the diagonal node weights and ``T`` a
lower-triangular Toeplitz difference stencil.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import binom

from .spaces import DomainParameterError, FractionalInterval

STRUCTURES = ("tridiagonal", "dense", "toeplitz-product")


@dataclass(frozen=True, eq=False)
class StencilChoice:
    """Difference stencil for the Grünwald path.

    ``kind="backward"`` is the two-point upwind difference ``(1, -1)/h``.
    ``kind="grunwald"`` uses ``(-1)**k * binom(alpha, k) / h**alpha`` for
    ``k < length`` (``shift`` moves the stencil ``shift`` nodes upward).
    Truncated shifted stencils can leave ``T`` numerically rank deficient,
    which makes ``A = h G^T G`` nearly singular; they are meant for
    experiments, not production runs.
    """

    kind: str = "backward"
    length: int = 2
    shift: int = 0

    def __post_init__(self):
        if self.kind not in ("backward", "grunwald"):
            raise DomainParameterError(f"unknown stencil kind {self.kind!r}")
        if self.length < 2:
            raise DomainParameterError("stencil length must be >= 2")
        if self.shift not in (0, 1):
            raise DomainParameterError("stencil shift must be 0 or 1")
        if self.kind == "backward" and (self.length != 2 or self.shift != 0):
            raise DomainParameterError("the backward stencil has length 2 and no shift")


@dataclass(frozen=True, eq=False)
class GrunwaldOperator:
    """Discrete conformable derivative ``G = diag(weights) @ T``.

    ``column`` and ``row`` are the first column and first row of the
    Toeplitz stencil matrix ``T``.  Columns are the ``n - 1`` interior
    unknowns; rows are the ``n`` nodes ``x_1 .. x_n`` at which the
    derivative is sampled, so the last row carries the difference into
    the Dirichlet value at ``x_n = L``.
    """

    column: np.ndarray
    row: np.ndarray
    weights: np.ndarray
    h: float

    @property
    def size(self) -> int:
        """Number of unknowns (columns of ``T``)."""
        return self.row.size

    @property
    def n_rows(self) -> int:
        return self.column.size

    @property
    def T(self) -> np.ndarray:
        from scipy.linalg import toeplitz
        return toeplitz(self.column, self.row)

    @property
    def W(self) -> np.ndarray:
        return np.diag(self.weights)

    @property
    def G(self) -> np.ndarray:
        return self.weights[:, None] * self.T

    @property
    def bandwidth(self) -> tuple[int, int]:
        """(lower, upper) number of nonzero off-diagonals of ``T``."""
        lower = int(np.flatnonzero(self.column).max(initial=0))
        upper = int(np.flatnonzero(self.row).max(initial=0))
        return lower, upper

    @cached_property
    def _fft(self):
        from .linalg import ToeplitzFFT
        return ToeplitzFFT(self.column, self.row)

    @cached_property
    def _fft_t(self):
        from .linalg import ToeplitzFFT
        return ToeplitzFFT(self.row, self.column)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.weights * self._fft.matvec(v)

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        # T^T is Toeplitz with column and row exchanged
        return self._fft_t.matvec(self.weights * v)


@dataclass(frozen=True, eq=False)
class OperatorPair:
    """Stiffness ``A`` and mass ``M`` over the interior DOFs of one coordinate."""

    A: sp.csr_matrix | np.ndarray
    M: sp.csr_matrix | np.ndarray
    structure_tag: str
    interval: FractionalInterval
    grunwald: GrunwaldOperator | None = None

    def __post_init__(self):
        if self.structure_tag not in STRUCTURES:
            raise ValueError(f"unknown structure tag {self.structure_tag!r}")
        n = self.interval.n_dofs
        if self.A.shape != (n, n) or self.M.shape != (n, n):
            raise ValueError("operator dimensions do not match the interior DOF count")

    @property
    def n(self) -> int:
        return self.interval.n_dofs

    @cached_property
    def abs_A(self):
        return abs(self.A)

    @cached_property
    def abs_M(self):
        return abs(self.M)

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        return _as_dense(self.A), _as_dense(self.M)

    def a(self, u, v) -> float:
        return float(u @ (self.A @ v))

    def m(self, u, v) -> float:
        return float(u @ (self.M @ v))


@dataclass(eq=False)
class LoadFactors:
    """Separable load ``l(p x q) = sum_t (F_x[t] . p) (F_y[t] . q)``."""

    terms: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a load needs at least one separable term")
        terms = []
        for fx, fy in self.terms:
            terms.append((np.asarray(fx, dtype=float).ravel(), np.asarray(fy, dtype=float).ravel()))
        nx = {t[0].size for t in terms}
        ny = {t[1].size for t in terms}
        if len(nx) != 1 or len(ny) != 1:
            raise ValueError("all load factors must share the x and y dimensions")
        self.terms = terms

    @property
    def shape(self) -> tuple[int, int]:
        return self.terms[0][0].size, self.terms[0][1].size

    def apply(self, p, q) -> float:
        return float(sum((fx @ p) * (fy @ q) for fx, fy in self.terms))

    def dominant_term(self) -> tuple[np.ndarray, np.ndarray]:
        norms = [np.linalg.norm(fx) * np.linalg.norm(fy) for fx, fy in self.terms]
        return self.terms[int(np.argmax(norms))]

    def to_matrix(self) -> np.ndarray:
        """Full ``n_x x n_y`` load tensor; diagnostics and oracles only."""
        return sum(np.outer(fx, fy) for fx, fy in self.terms)

    def is_zero(self) -> bool:
        return all(not fx.any() or not fy.any() for fx, fy in self.terms)


def _as_dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def _tridiag_from_elements(diag_el: np.ndarray, off_el: np.ndarray) -> sp.csr_matrix:
    """Assemble element 2x2 blocks ``[[d, o], [o, d]]`` and keep interior rows."""
    n_el = diag_el.size
    full_diag = np.zeros(n_el + 1)
    full_diag[:-1] += diag_el
    full_diag[1:] += diag_el
    main = full_diag[1:-1]
    off = off_el[1:-1]
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def p1_mass(interval: FractionalInterval) -> sp.csr_matrix:
    h = interval.mesh.h
    return _tridiag_from_elements(h / 3.0, h / 6.0)


def weighted_element_integrals(interval: FractionalInterval) -> np.ndarray:
    """Exact ``int_{e_i} x**(2(1-alpha)) dx`` for every element."""
    beta = 3.0 - 2.0 * interval.alpha
    x = interval.mesh.nodes
    xb = x ** beta
    return (xb[1:] - xb[:-1]) / beta


def assemble_fem_pair(interval: FractionalInterval) -> OperatorPair:
    if interval.n_dofs < 1:
        raise DomainParameterError("interval has no interior degree of freedom")
    h = interval.mesh.h
    w = weighted_element_integrals(interval) / h ** 2
    A = _tridiag_from_elements(w, -w)
    return OperatorPair(A, p1_mass(interval), "tridiagonal", interval)


def grunwald_stencil(interval: FractionalInterval, stencil: StencilChoice) -> tuple[np.ndarray, np.ndarray]:
    """First column (length ``n``) and first row (length ``n - 1``) of ``T``."""
    n = interval.n_dofs
    h = float(interval.mesh.h[0])
    col = np.zeros(n + 1)
    row = np.zeros(n)
    if stencil.kind == "backward":
        col[0] = 1.0 / h
        col[1] = -1.0 / h
    else:
        a = interval.alpha
        g = np.array([(-1.0) ** k * binom(a, k) for k in range(stencil.length)]) / h ** a
        s = stencil.shift
        # entry T[i, j] = g[i - j + s]
        for k, gk in enumerate(g):
            off = k - s
            if 0 <= off <= n:
                col[off] = gk
            elif -n < off < 0:
                row[-off] = gk
    row[0] = col[0]
    return col, row


def assemble_grunwald_operator(interval: FractionalInterval, stencil: StencilChoice | None = None) -> GrunwaldOperator:
    if not interval.mesh.is_uniform:
        raise DomainParameterError("the Grünwald discretization needs a uniform mesh")
    stencil = stencil or StencilChoice()
    col, row = grunwald_stencil(interval, stencil)
    # derivative samples at x_1 .. x_n; the weight is never evaluated at 0
    weights = interval.mesh.nodes[1:] ** (1.0 - interval.alpha)
    return GrunwaldOperator(col, row, weights, float(interval.mesh.h[0]))


def grunwald_energy_pair(G: GrunwaldOperator, interval: FractionalInterval) -> OperatorPair:
    if G.size != interval.n_dofs:
        raise ValueError("Grünwald operator and interval sizes differ")
    lower, upper = G.bandwidth
    if lower <= 1 and upper == 0:
        n = G.size
        Gs = sp.diags([G.weights[1:] * G.column[1], G.weights[:n] * G.column[0]], [-1, 0],
                      shape=(n + 1, n), format="csr")
        A = (G.h * (Gs.T @ Gs)).tocsr()
    else:
        Gm = G.G
        A = G.h * (Gm.T @ Gm)
    return OperatorPair(A, p1_mass(interval), "toeplitz-product", interval, grunwald=G)


def _gauss_legendre(order: int):
    return np.polynomial.legendre.leggauss(order)


def assemble_load_factor(interval: FractionalInterval, f: Callable, order: int = 5) -> np.ndarray:
    """``(F)_i = int f(x) phi_i(x) dx`` by Gauss-Legendre per element.

    The first element of a fractional coordinate gets twice the order.
    """
    nodes = interval.mesh.nodes
    n_el = nodes.size - 1
    load = np.zeros(n_el + 1)
    for e in range(n_el):
        k = 2 * order if (e == 0 and interval.alpha < 1.0) else order
        xi, wi = _gauss_legendre(k)
        a, b = nodes[e], nodes[e + 1]
        he = b - a
        x = a + 0.5 * he * (xi + 1.0)
        fx = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
        left = (b - x) / he
        right = (x - a) / he
        load[e] += 0.5 * he * np.sum(wi * fx * left)
        load[e + 1] += 0.5 * he * np.sum(wi * fx * right)
    return load[1:-1]


def assemble_pair(interval: FractionalInterval, discretization: str = "fem",
                  stencil: StencilChoice | None = None) -> OperatorPair:
    if discretization == "fem":
        return assemble_fem_pair(interval)
    if discretization == "grunwald":
        return grunwald_energy_pair(assemble_grunwald_operator(interval, stencil), interval)
    raise DomainParameterError(f"unknown discretization {discretization!r}")


def write_matrix_market(path, A, comment: str | None = None) -> None:
    """Coordinate MatrixMarket file, entries sorted by row then column.

    Values are written with ``repr`` so they round-trip exactly.
    """
    coo = sp.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    lines = ["%%MatrixMarket matrix coordinate real general"]
    if comment:
        lines.extend(f"% {c}" for c in comment.splitlines())
    lines.append(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}")
    for k in order:
        lines.append(f"{coo.row[k] + 1} {coo.col[k] + 1} {float(coo.data[k])!r}")
    with open(os.fspath(path), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix_market(path) -> sp.coo_matrix:
    from scipy.io import mmread
    return sp.coo_matrix(mmread(os.fspath(path)))
