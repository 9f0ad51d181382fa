"""SPD solvers and structured products.

Direct Cholesky below dimension 64 (banded Cholesky for tridiagonal
matrices of any size), Jacobi-preconditioned CG otherwise.  Toeplitz
products go through a power-of-two circulant embedding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

DIRECT_LIMIT = 64
DENSE_KRON_LIMIT = 4096


class ContractError(ValueError):
    """Input violates a solver precondition (shape, symmetry, definiteness)."""


class ConvergenceError(RuntimeError):
    """Iterative solve stopped before reaching its tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolveInfo:
    method: str
    iterations: int
    relative_residual: float


def is_symmetric(S, rtol: float = 1e-12) -> bool:
    if isinstance(S, LinearOperator):
        rng = np.random.default_rng(12345)
        u, v = rng.standard_normal((2, S.shape[0]))
        a, b = u @ S.matvec(v), v @ S.matvec(u)
        return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300) * 10
    if sp.issparse(S):
        diff = abs(S - S.T)
        ref = abs(S).max()
        return diff.max() <= rtol * ref if diff.nnz else True
    S = np.asarray(S)
    return np.max(np.abs(S - S.T), initial=0.0) <= rtol * np.max(np.abs(S), initial=0.0)


def _diagonal(S) -> np.ndarray:
    if isinstance(S, LinearOperator):
        d = getattr(S, "diagonal", None)
        return None if d is None else np.asarray(d())
    return np.asarray(S.diagonal())


def _is_tridiagonal(S) -> bool:
    if not sp.issparse(S):
        return False
    coo = S.tocoo()
    return coo.nnz == 0 or int(np.max(np.abs(coo.row - coo.col))) <= 1


def pcg(matvec, b, *, diag=None, tol=1e-10, maxiter=None):
    """Preconditioned CG from a zero start.

    Returns ``(x, iterations, relative_residual)``; the caller decides what
    to do when the tolerance was not met.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    inv_d = None if diag is None else 1.0 / diag
    z = r if inv_d is None else inv_d * r
    d = z.copy()
    rz = r @ z
    k = 0
    res = 1.0
    while k < maxiter:
        Ad = matvec(d)
        dAd = d @ Ad
        if dAd <= 0.0:
            raise ContractError("matrix is not positive definite (d^T S d <= 0 in CG)")
        step = rz / dAd
        x += step * d
        r -= step * Ad
        k += 1
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = r if inv_d is None else inv_d * r
        rz_new = r @ z
        d *= rz_new / rz
        d += z
        rz = rz_new
    return x, k, res


def _banded_solve(S, b):
    S = S.tocsr()
    n = S.shape[0]
    if n == 1:
        s = S[0, 0]
        if not s > 0.0:
            raise ContractError("matrix is not positive definite")
        return b / s
    ab = np.zeros((2, n))
    ab[1] = S.diagonal()
    if n > 1:
        ab[0, 1:] = S.diagonal(1)
    try:
        return sla.solveh_banded(ab, b)
    except np.linalg.LinAlgError as exc:
        raise ContractError(f"matrix is not positive definite: {exc}") from exc


def spd_solve(S, b, *, tol: float = 1e-10, maxiter: int | None = None,
              preconditioner: str = "jacobi", method: str = "auto",
              return_info: bool = False):
    """Solve ``S x = b`` for symmetric positive definite ``S``.

    ``S`` may be a dense array, a scipy sparse matrix or a
    ``LinearOperator`` (CG only).  ``method`` is one of ``auto``,
    ``cholesky``, ``banded`` or ``cg``.
    """
    b = np.asarray(b, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or b.shape != (n,):
        raise ContractError(f"shape mismatch: S {S.shape}, b {b.shape}")
    if not is_symmetric(S):
        raise ContractError("spd_solve refuses a non-symmetric matrix")
    if preconditioner not in ("jacobi", "none"):
        raise ContractError(f"unknown preconditioner {preconditioner!r}")

    if method == "auto":
        if isinstance(S, LinearOperator):
            method = "cg"
        elif _is_tridiagonal(S):
            method = "banded"
        elif n < DIRECT_LIMIT:
            method = "cholesky"
        else:
            method = "cg"

    if method == "banded":
        x = _banded_solve(sp.csr_matrix(S), b)
        info = SolveInfo("banded", 0, _relres(S, x, b))
    elif method == "cholesky":
        Sd = S.toarray() if sp.issparse(S) else np.asarray(S, dtype=float)
        try:
            x = sla.cho_solve(sla.cho_factor(Sd, lower=True), b)
        except np.linalg.LinAlgError as exc:
            raise ContractError(f"matrix is not positive definite: {exc}") from exc
        info = SolveInfo("cholesky", 0, _relres(S, x, b))
    elif method == "cg":
        matvec = S.matvec if isinstance(S, LinearOperator) else (lambda v: S @ v)
        diag = _diagonal(S) if preconditioner == "jacobi" else None
        if diag is not None and np.any(diag <= 0.0):
            raise ContractError("nonpositive diagonal entry in an SPD solve")
        x, its, res = pcg(matvec, b, diag=diag, tol=tol, maxiter=maxiter)
        if res > tol:
            raise ConvergenceError("CG did not converge", res, its)
        info = SolveInfo("cg", its, res)
    else:
        raise ContractError(f"unknown method {method!r}")
    return (x, info) if return_info else x


def _relres(S, x, b) -> float:
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return 0.0
    return float(np.linalg.norm(S @ x - b) / bn)


def _next_pow2(m: int) -> int:
    return 1 << max(0, (m - 1).bit_length())


class ToeplitzFFT:
    """Toeplitz matrix with a cached circulant spectrum.

    The matrix has first column ``column`` (its row count) and first row
    ``row`` (its column count; ``None`` means a square lower-triangular
    matrix).  It is embedded in a circulant of size
    ``2**k >= rows + cols - 1`` whose spectrum is computed once, so each
    product costs one forward and one inverse real FFT.
    """

    def __init__(self, column, row=None):
        c = np.asarray(column, dtype=float)
        r = np.zeros(c.size) if row is None else np.asarray(row, dtype=float)
        if c.size == 0 or r.size == 0:
            raise ContractError("empty Toeplitz stencil")
        self.shape = (c.size, r.size)
        self.m = _next_pow2(c.size + r.size - 1)
        circ = np.zeros(self.m)
        circ[:c.size] = c
        if r.size > 1:
            circ[self.m - r.size + 1:] = r[:0:-1]
        self.spectrum = np.fft.rfft(circ)

    def __matmul__(self, v):
        return self.matvec(v)

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        rows, cols = self.shape
        if v.shape != (cols,):
            raise ContractError(f"stencil with {cols} columns cannot act on a vector of shape {v.shape}")
        return np.fft.irfft(self.spectrum * np.fft.rfft(v, self.m), self.m)[:rows]


def toeplitz_matvec(column, v, row=None) -> np.ndarray:
    """``T @ v`` for the Toeplitz matrix with first column ``column``.

    ``row`` is the first row; ``None`` means lower triangular.  Different
    lengths give a rectangular matrix.  See
    :class:`ToeplitzFFT` for the embedding; reuse one of those when the
    same matrix is applied repeatedly.
    """
    return ToeplitzFFT(column, row).matvec(v)


class KroneckerSumOperator:
    """``K = A_x (x) M_y + M_x (x) A_y`` acting on ``n_x x n_y`` coefficient matrices.

    Row-major vectorization is used throughout: ``vec(U) = U.ravel()``, so
    ``(A (x) B) vec(U) = vec(A U B^T)``.
    """

    def __init__(self, A_x, M_x, A_y, M_y):
        self.A_x, self.M_x, self.A_y, self.M_y = A_x, M_x, A_y, M_y
        self.n_x = A_x.shape[0]
        self.n_y = A_y.shape[0]
        for name, mat, n in (("A_x", A_x, self.n_x), ("M_x", M_x, self.n_x),
                             ("A_y", A_y, self.n_y), ("M_y", M_y, self.n_y)):
            if mat.shape != (n, n):
                raise ContractError(f"{name} has shape {mat.shape}, expected {(n, n)}")

    @classmethod
    def from_pairs(cls, ops_x, ops_y) -> "KroneckerSumOperator":
        return cls(ops_x.A, ops_x.M, ops_y.A, ops_y.M)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_x, self.n_y

    @property
    def size(self) -> int:
        return self.n_x * self.n_y

    def apply(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if U.shape != (self.n_x, self.n_y):
            raise ContractError(f"coefficient matrix has shape {U.shape}, expected {self.shape}")
        # (A U M)^T = M U^T A for symmetric factors; keep sparse operands on the left
        AU = self.A_x @ U
        MU = self.M_x @ U
        return np.asarray((self.M_y @ AU.T).T + (self.A_y @ MU.T).T)

    def diagonal(self) -> np.ndarray:
        dAx, dMx = self.A_x.diagonal(), self.M_x.diagonal()
        dAy, dMy = self.A_y.diagonal(), self.M_y.diagonal()
        return (np.outer(dAx, dMy) + np.outer(dMx, dAy)).ravel()

    def as_linear_operator(self) -> LinearOperator:
        shape = self.shape

        def mv(v):
            return self.apply(np.reshape(v, shape)).ravel()

        op = LinearOperator((self.size, self.size), matvec=mv, rmatvec=mv, dtype=float)
        op.diagonal = self.diagonal
        return op

    def to_dense(self) -> np.ndarray:
        if self.size > DENSE_KRON_LIMIT:
            raise ContractError(f"refusing to materialize a Kronecker sum of size {self.size}")
        d = lambda X: X.toarray() if sp.issparse(X) else np.asarray(X)
        return np.kron(d(self.A_x), d(self.M_y)) + np.kron(d(self.M_x), d(self.A_y))

    def energy(self, U) -> float:
        U = np.asarray(U, dtype=float)
        return float(np.sum(U * self.apply(U)))

    def solve(self, R, *, tol: float = 1e-12, method: str = "auto") -> np.ndarray:
        """``K^{-1} vec(R)`` reshaped; direct below the CG threshold."""
        R = np.asarray(R, dtype=float)
        if R.shape != self.shape:
            raise ContractError(f"residual has shape {R.shape}, expected {self.shape}")
        if method == "auto":
            method = "cholesky" if self.size < DIRECT_LIMIT else "cg"
        if method == "cholesky":
            x = spd_solve(self.to_dense(), R.ravel(), method="cholesky")
        elif method == "cg":
            x = spd_solve(self.as_linear_operator(), R.ravel(), tol=tol, method="cg")
        elif method == "eig":
            x = _fast_diagonalization_solve(self, R).ravel()
        else:
            raise ContractError(f"unknown method {method!r}")
        return x.reshape(self.shape)


def _fast_diagonalization_solve(K: KroneckerSumOperator, R) -> np.ndarray:
    """Sylvester-structured direct solve via the generalized eigenpairs of (A, M)."""
    d = lambda X: X.toarray() if sp.issparse(X) else np.asarray(X)
    lx, Vx = sla.eigh(d(K.A_x), d(K.M_x))
    ly, Vy = sla.eigh(d(K.A_y), d(K.M_y))
    # V^T M V = I, so K^{-1} = (Vx (x) Vy) diag(1/(lx_i + ly_j)) (Vx (x) Vy)^T
    Rt = Vx.T @ R @ Vy
    return Vx @ (Rt / (lx[:, None] + ly[None, :])) @ Vy.T


def kron_sum_matvec(K: KroneckerSumOperator, U) -> np.ndarray:
    return K.apply(U)


def dual_norm_squared(K: KroneckerSumOperator, R, *, tol: float = 1e-12, method: str = "auto") -> float:
    """``vec(R)^T K^{-1} vec(R)``: squared dual norm of a discrete residual."""
    R = np.asarray(R, dtype=float)
    if R.shape != K.shape:
        raise ContractError(f"residual has shape {R.shape}, expected {K.shape}")
    if not R.any():
        return 0.0
    E = K.solve(R, tol=tol, method=method)
    return max(float(np.sum(R * E)), 0.0)
