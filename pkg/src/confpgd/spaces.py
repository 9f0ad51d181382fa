"""One-dimensional fractional domains and meshes.

Every coordinate lives on ``(0, L)`` with the singular end of the weight
``x**(2*(1-alpha))`` at ``x = 0`` and homogeneous Dirichlet values at both
ends.  ``alpha == 1`` is a classical H^1 coordinate (weight identically 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainParameterError(ValueError):
    """Invalid mesh, order or domain parameter."""


@dataclass(frozen=True)
class FractionalOrder:
    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a <= 1.0):
            raise DomainParameterError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    @property
    def is_classical(self) -> bool:
        return self.alpha == 1.0


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Strictly increasing nodes ``0 = x_0 < ... < x_n = L``."""

    nodes: np.ndarray
    grading_exponent: float = 1.0
    dirichlet: bool = True

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise DomainParameterError("a mesh needs at least two elements")
        if nodes[0] != 0.0 or nodes[-1] <= 0.0:
            raise DomainParameterError("mesh must start at 0 and end at L > 0")
        if np.any(np.diff(nodes) <= 0.0):
            raise DomainParameterError("mesh nodes must be strictly increasing")
        if self.grading_exponent < 1.0:
            raise DomainParameterError("grading exponent must be >= 1")
        if not self.dirichlet:
            raise DomainParameterError("only Dirichlet-both-ends meshes are supported")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def length(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def is_uniform(self) -> bool:
        h = self.h
        return bool(np.allclose(h, h[0], rtol=1e-12, atol=0.0))

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    def __eq__(self, other):
        if not isinstance(other, Mesh1D):
            return NotImplemented
        return (self.grading_exponent == other.grading_exponent
                and np.array_equal(self.nodes, other.nodes))

    def __hash__(self):
        return hash((self.grading_exponent, self.nodes.tobytes()))


@dataclass(frozen=True)
class FractionalInterval:
    order: FractionalOrder
    mesh: Mesh1D
    label: str = "x"

    @property
    def alpha(self) -> float:
        return self.order.alpha

    @property
    def n_dofs(self) -> int:
        """Interior degrees of freedom (Dirichlet at both ends)."""
        return self.mesh.n_elements - 1


def _check_size(L, n):
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise DomainParameterError(f"number of elements must be an integer, got {n!r}")
    if n < 2:
        raise DomainParameterError(f"need n >= 2 elements, got {n}")
    if not L > 0:
        raise DomainParameterError(f"domain length must be positive, got {L!r}")


def make_uniform_mesh(L: float, n: int) -> Mesh1D:
    _check_size(L, n)
    nodes = L * (np.arange(n + 1) / n)
    return Mesh1D(nodes, grading_exponent=1.0)


def make_graded_mesh(L: float, n: int, gamma: float) -> Mesh1D:
    """Nodes ``L*(i/n)**gamma``, clustered toward the singular end x = 0."""
    _check_size(L, n)
    if not gamma >= 1.0:
        raise DomainParameterError(f"grading exponent must be >= 1, got {gamma!r}")
    if gamma == 1.0:
        return make_uniform_mesh(L, n)
    nodes = L * (np.arange(n + 1) / n) ** gamma
    return Mesh1D(nodes, grading_exponent=float(gamma))


def default_grading(alpha: float) -> float:
    return 1.0 if alpha == 1.0 else 2.0


def make_interval(alpha: float, n: int, L: float = 1.0, grading: float | None = None,
                  label: str = "x") -> FractionalInterval:
    """Convenience constructor; grading defaults to 2 for fractional orders."""
    order = FractionalOrder(alpha)
    gamma = default_grading(order.alpha) if grading is None else grading
    return FractionalInterval(order, make_graded_mesh(L, n, gamma), label)


def conformable_derivative_pointwise(f_prime_value, x, alpha) -> float:
    """Conformable derivative ``x**(1-alpha) * f'(x)`` of a differentiable f."""
    a = alpha.alpha if isinstance(alpha, FractionalOrder) else FractionalOrder(alpha).alpha
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise DomainParameterError("the conformable weight is only evaluated at x > 0")
    out = x ** (1.0 - a) * f_prime_value
    return float(out) if out.ndim == 0 else out
