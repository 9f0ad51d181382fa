"""Rank-one modes, separable iterates and residual contractions.

Nothing here ever forms an ``n_x x n_y`` array: every contraction works
with the stacked 1-D factors, so storage and cost stay in
``O(N (n_x + n_y))``.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import LoadFactors, OperatorPair
from .linalg import ContractError

ORTHO_COLLAPSE_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class RankOneMode:
    """The tensor ``scale * p (x) q``."""

    p: np.ndarray
    q: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        p = np.array(self.p, dtype=float).ravel()
        q = np.array(self.q, dtype=float).ravel()
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "scale", float(self.scale))

    def is_zero(self) -> bool:
        return self.scale == 0.0 or not self.p.any() or not self.q.any()

    def scaled(self, factor: float) -> "RankOneMode":
        return RankOneMode(self.p, self.q, self.scale * factor)

    def to_matrix(self) -> np.ndarray:
        return self.scale * np.outer(self.p, self.q)

    @property
    def nbytes(self) -> int:
        return self.p.nbytes + self.q.nbytes


def _check_mode(mode: RankOneMode):
    if mode.is_zero():
        raise ContractError("zero rank-one mode")


def rank_one_energy(mode: RankOneMode, ops_x: OperatorPair, ops_y: OperatorPair) -> float:
    """``a(w, w)`` for ``w = scale * p (x) q``."""
    _check_mode(mode)
    p, q = mode.p, mode.q
    e = ops_x.a(p, p) * ops_y.m(q, q) + ops_x.m(p, p) * ops_y.a(q, q)
    return mode.scale ** 2 * e


def _sign_normalized(v: np.ndarray) -> tuple[np.ndarray, float]:
    nz = np.flatnonzero(v)
    if nz.size and v[nz[0]] < 0.0:
        return -v, -1.0
    return v, 1.0


def renormalize(mode: RankOneMode, ops_x: OperatorPair, ops_y: OperatorPair) -> RankOneMode:
    """Unit ``M_x``/``M_y`` factors with a positive first nonzero entry in each.

    The represented tensor is unchanged; magnitude and sign move to ``scale``.
    """
    _check_mode(mode)
    np_ = np.sqrt(ops_x.m(mode.p, mode.p))
    nq = np.sqrt(ops_y.m(mode.q, mode.q))
    if np_ == 0.0 or nq == 0.0:
        raise ContractError("factor with zero mass norm")
    p, sp_ = _sign_normalized(mode.p / np_)
    q, sq = _sign_normalized(mode.q / nq)
    if np_ == 1.0 and nq == 1.0 and sp_ == 1.0 and sq == 1.0:
        return mode
    return RankOneMode(p, q, mode.scale * np_ * nq * sp_ * sq)


class SeparableFunction:
    """``u_N = sum_k scale_k p_k (x) q_k`` with its operator context.

    Modes are appended between greedy steps and never modified in place.
    """

    def __init__(self, ops_x: OperatorPair, ops_y: OperatorPair, modes=()):
        self.ops_x = ops_x
        self.ops_y = ops_y
        self._modes: list[RankOneMode] = []
        self._P = np.empty((0, ops_x.n))
        self._Q = np.empty((0, ops_y.n))
        self._scales = np.empty(0)
        for m in modes:
            self.append(m)

    def __len__(self):
        return len(self._modes)

    def __iter__(self):
        return iter(self._modes)

    def __getitem__(self, k):
        return self._modes[k]

    @property
    def modes(self) -> tuple[RankOneMode, ...]:
        return tuple(self._modes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ops_x.n, self.ops_y.n

    def append(self, mode: RankOneMode) -> None:
        if mode.p.size != self.ops_x.n or mode.q.size != self.ops_y.n:
            raise ContractError("mode dimensions do not match the operator pairs")
        self._modes.append(mode)
        self._P = np.vstack([self._P, mode.p[None, :]])
        self._Q = np.vstack([self._Q, mode.q[None, :]])
        self._scales = np.append(self._scales, mode.scale)

    @property
    def P(self) -> np.ndarray:
        return self._P

    @property
    def Q(self) -> np.ndarray:
        return self._Q

    @property
    def scales(self) -> np.ndarray:
        return self._scales

    @property
    def nbytes(self) -> int:
        """Bytes held by the mode factors and scales."""
        return sum(m.nbytes for m in self._modes) + 8 * len(self._modes)

    def energy(self) -> float:
        """``a(u_N, u_N)`` from mode-pairwise 1-D contractions."""
        if not self._modes:
            return 0.0
        P, Q, s = self._P, self._Q, self._scales
        ax = P @ (self.ops_x.A @ P.T)
        mx = P @ (self.ops_x.M @ P.T)
        ay = Q @ (self.ops_y.A @ Q.T)
        my = Q @ (self.ops_y.M @ Q.T)
        return float(s @ ((ax * my + mx * ay) @ s))

    def to_matrix(self) -> np.ndarray:
        """Full coefficient matrix; diagnostics and small-grid oracles only."""
        return (self._P.T * self._scales) @ self._Q


class ResidualContraction:
    """Evaluates ``<r_N, p (x) q> = l(p (x) q) - a(u_N, p (x) q)`` from 1-D data."""

    def __init__(self, load: LoadFactors, history: SeparableFunction):
        nx, ny = load.shape
        if (nx, ny) != history.shape:
            raise ContractError(f"load shape {(nx, ny)} does not match iterate shape {history.shape}")
        self.load = load
        self.history = history
        self._Fx = np.array([t[0] for t in load.terms])
        self._Fy = np.array([t[1] for t in load.terms])

    @property
    def ops_x(self) -> OperatorPair:
        return self.history.ops_x

    @property
    def ops_y(self) -> OperatorPair:
        return self.history.ops_y

    def _check(self, v, n, name):
        v = np.asarray(v, dtype=float)
        if v.shape != (n,):
            raise ContractError(f"{name} has shape {v.shape}, expected ({n},)")
        return v

    def parts(self, p, q) -> tuple[float, float]:
        """``(l(p (x) q), a(u_N, p (x) q))``."""
        p = self._check(p, self.ops_x.n, "p")
        q = self._check(q, self.ops_y.n, "q")
        load = float((self._Fx @ p) @ (self._Fy @ q))
        h = self.history
        if not len(h):
            return load, 0.0
        ox, oy = self.ops_x, self.ops_y
        hist = (h.P @ (ox.A @ p)) * (h.Q @ (oy.M @ q)) + (h.P @ (ox.M @ p)) * (h.Q @ (oy.A @ q))
        return load, float(h.scales @ hist)

    def magnitude(self, p, q) -> float:
        """Sum of absolute values of the terms making up ``<r_N, p (x) q>``.

        ``eps * magnitude / |<r_N, p (x) q>|`` bounds the relative rounding
        error of the contraction.
        """
        p, q = np.abs(p), np.abs(q)
        load = float((np.abs(self._Fx) @ p) @ (np.abs(self._Fy) @ q))
        h = self.history
        if not len(h):
            return load
        ox, oy = self.ops_x, self.ops_y
        P, Q = np.abs(h.P), np.abs(h.Q)
        hist = (P @ (ox.abs_A @ p)) * (Q @ (oy.abs_M @ q)) + (P @ (ox.abs_M @ p)) * (Q @ (oy.abs_A @ q))
        return load + float(np.abs(h.scales) @ hist)

    def apply(self, p, q) -> float:
        load, hist = self.parts(p, q)
        return load - hist

    def partial_x_parts(self, q) -> tuple[np.ndarray, np.ndarray]:
        q = self._check(q, self.ops_y.n, "q")
        load = self._Fx.T @ (self._Fy @ q)
        h = self.history
        if not len(h):
            return load, np.zeros_like(load)
        ox, oy = self.ops_x, self.ops_y
        cm = h.scales * (h.Q @ (oy.M @ q))
        ca = h.scales * (h.Q @ (oy.A @ q))
        return load, ox.A @ (h.P.T @ cm) + ox.M @ (h.P.T @ ca)

    def partial_y_parts(self, p) -> tuple[np.ndarray, np.ndarray]:
        p = self._check(p, self.ops_x.n, "p")
        load = self._Fy.T @ (self._Fx @ p)
        h = self.history
        if not len(h):
            return load, np.zeros_like(load)
        ox, oy = self.ops_x, self.ops_y
        cm = h.scales * (h.P @ (ox.M @ p))
        ca = h.scales * (h.P @ (ox.A @ p))
        return load, oy.A @ (h.Q.T @ cm) + oy.M @ (h.Q.T @ ca)

    def partial_x(self, q) -> np.ndarray:
        if not np.any(q):
            raise ContractError("residual_partial_x needs a nonzero q")
        load, hist = self.partial_x_parts(q)
        return load - hist

    def partial_y(self, p) -> np.ndarray:
        if not np.any(p):
            raise ContractError("residual_partial_y needs a nonzero p")
        load, hist = self.partial_y_parts(p)
        return load - hist

    def to_matrix(self) -> np.ndarray:
        """Full residual coefficient matrix ``F - K vec(U_N)``; diagnostics only."""
        R = self.load.to_matrix()
        h = self.history
        if len(h):
            ox, oy = self.ops_x, self.ops_y
            SP = h.P.T * h.scales
            R = R - (ox.A @ SP) @ (oy.M @ h.Q.T).T - (ox.M @ SP) @ (oy.A @ h.Q.T).T
        return np.asarray(R)


def residual_apply(r: ResidualContraction, p, q) -> float:
    return r.apply(p, q)


def residual_partial_x(r: ResidualContraction, q) -> np.ndarray:
    return r.partial_x(q)


def residual_partial_y(r: ResidualContraction, p) -> np.ndarray:
    return r.partial_y(p)


@dataclass(frozen=True)
class OrthogonalizationResult:
    mode: RankOneMode
    collapsed: bool


def _gram_schmidt(v, basis, M):
    if not len(basis):
        return v.copy()
    w = v.copy()
    for _ in range(2):  # reorthogonalize once
        Mb = (M @ basis.T).T
        G = basis @ (M @ basis.T)
        coef = np.linalg.solve(G, Mb @ w)
        w = w - basis.T @ coef
    return w


def orthogonalize_new_mode(mode: RankOneMode, history: SeparableFunction) -> OrthogonalizationResult:
    """Project ``p`` against earlier ``p_k`` in ``M_x`` and ``q`` against ``q_k`` in ``M_y``.

    If either projection removes all but ``ORTHO_COLLAPSE_FLOOR`` of a
    factor's mass norm, the mode is returned untouched with
    ``collapsed=True``.
    """
    if not len(history):
        return OrthogonalizationResult(mode, False)
    ox, oy = history.ops_x, history.ops_y
    p = _gram_schmidt(mode.p, history.P, ox.M)
    q = _gram_schmidt(mode.q, history.Q, oy.M)
    before = (np.sqrt(ox.m(mode.p, mode.p)), np.sqrt(oy.m(mode.q, mode.q)))
    after = (np.sqrt(max(ox.m(p, p), 0.0)), np.sqrt(max(oy.m(q, q), 0.0)))
    if after[0] < ORTHO_COLLAPSE_FLOOR * before[0] or after[1] < ORTHO_COLLAPSE_FLOOR * before[1]:
        warnings.warn("orthogonalization collapsed a factor; mode kept unchanged", RuntimeWarning,
                      stacklevel=2)
        return OrthogonalizationResult(mode, True)
    return OrthogonalizationResult(RankOneMode(p, q, mode.scale), False)


# -- serialization ---------------------------------------------------------

def format_float(x) -> str:
    """17 significant digits; round-trips every double."""
    if x is None:
        return "null"
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    text = format(x, ".17g")
    # keep integral values recognizably floating point
    return text if any(c in text for c in ".en") else text + ".0"


def dumps_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps_json(v, indent, _level + 1) for v in obj) + "]"
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    return json.dumps(obj)


def modes_document(u: SeparableFunction) -> dict:
    ix, iy = u.ops_x.interval, u.ops_y.interval
    return {
        "alpha_x": ix.alpha,
        "alpha_y": iy.alpha,
        "meshes": {"x": ix.mesh.nodes, "y": iy.mesh.nodes},
        "modes": [{"scale": m.scale, "p": m.p, "q": m.q} for m in u],
    }


def save_modes(path, u: SeparableFunction) -> None:
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        fh.write(dumps_json(modes_document(u)) + "\n")


def load_modes(path) -> dict:
    """Parse a modes file; factors come back as arrays of ``RankOneMode``."""
    with open(os.fspath(path), encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["meshes"] = {k: np.asarray(v) for k, v in doc["meshes"].items()}
    doc["modes"] = [RankOneMode(m["p"], m["q"], m["scale"]) for m in doc["modes"]]
    return doc
