"""Greedy rank-one PGD with an alternating least-squares inner loop.

Each greedy step maximizes ``<r_N, w>**2 / a(w, w)`` over rank-one ``w``
by alternating SPD solves in x and y, then adds ``tau * w`` with the exact
line-search ``tau = <r_N, w> / a(w, w)``.  The realized energy decrease is
``<r_N, w>**2 / a(w, w)``, which also drives the stopping rule.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .assembly import OperatorPair
from .linalg import (DIRECT_LIMIT, ContractError, ConvergenceError, KroneckerSumOperator,
                     dual_norm_squared, spd_solve)
from .lowrank import (RankOneMode, ResidualContraction, SeparableFunction,
                      orthogonalize_new_mode, rank_one_energy, renormalize)

log = logging.getLogger(__name__)

DEFAULT_SEED = 0x5EED
VANISH_RTOL = 1e-12
MONOTONE_SLACK = 1e-12
EPS = np.finfo(float).eps
ROUNDOFF_FACTOR = 8.0
INIT_STRATEGIES = ("load-factor", "random-seeded", "ones")


class ResidualVanished(Exception):
    """The residual is zero on every rank-one test direction tried."""


class SolveError(RuntimeError):
    """A numerical failure inside greedy step ``iteration``."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"greedy step {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class AlsConfig:
    max_sweeps: int = 20
    rq_rel_improvement_tol: float = 1e-6
    init_strategy: str = "load-factor"
    seed: int = DEFAULT_SEED
    renormalize: bool = True
    solver_tol: float = 1e-12

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if not self.rq_rel_improvement_tol > 0 or not self.solver_tol > 0:
            raise ValueError("ALS tolerances must be positive")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init_strategy must be one of {INIT_STRATEGIES}")


@dataclass(frozen=True)
class GreedyConfig:
    eps: float = 1e-4
    max_modes: int = 100
    absolute_floor: float = 1e-28
    orthogonalize: bool = False
    stagnation_ratio: float = 1e-3
    stagnation_factor: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if self.max_modes < 1:
            raise ValueError("max_modes must be >= 1")
        if not self.absolute_floor > 0:
            raise ValueError("absolute_floor must be positive")


@dataclass(frozen=True)
class Diagnostics:
    """Opt-in diagnostics; each costs one Kronecker-sum solve per step."""

    theta: bool = False
    dual_norm: bool = False
    dual_norm_tol: float = 1e-13
    dual_norm_method: str = "auto"

    @property
    def needs_dual(self) -> bool:
        return self.theta or self.dual_norm


@dataclass
class IterationRecord:
    N: int
    delta_E: float
    rq: float
    tau: float
    sweeps: int
    theta_hat: float | None = None
    energy_error_sq: float | None = None
    rq_violations: int = 0
    x_solves: int = 0
    y_solves: int = 0


@dataclass
class AlsResult:
    mode: RankOneMode
    rq: float
    sweeps: int
    rq_history: list[float] = field(default_factory=list)
    violations: int = 0
    x_solves: int = 0
    y_solves: int = 0
    converged: bool = False
    raw_violations: int = 0


@dataclass
class GreedyResult:
    solution: SeparableFunction
    records: list[IterationRecord]
    status: str
    initial_energy_error_sq: float | None = None
    als_violations: int = 0
    als_raw_violations: int = 0

    @property
    def n_modes(self) -> int:
        return len(self.solution)

    @property
    def final_delta_E(self) -> float | None:
        return self.records[-1].delta_E if self.records else None

    @property
    def min_theta_hat(self) -> float | None:
        th = [r.theta_hat for r in self.records if r.theta_hat is not None]
        return min(th) if th else None


# -- inner loop ------------------------------------------------------------

def _system(ops: OperatorPair, c_stiff: float, c_mass: float):
    """``c_stiff * A + c_mass * M`` in the cheapest form for its structure."""
    g = ops.grunwald
    if g is not None and not sp.issparse(ops.A) and ops.n >= DIRECT_LIMIT:
        diag = c_stiff * np.diag(ops.A) + c_mass * ops.M.diagonal()
        M = ops.M

        def mv(v):
            return c_stiff * g.h * g.rmatvec(g.matvec(v)) + c_mass * (M @ v)

        op = LinearOperator((ops.n, ops.n), matvec=mv, rmatvec=mv, dtype=float)
        op.diagonal = lambda: diag
        return op
    return c_stiff * ops.A + c_mass * ops.M


def _vanishes(load_part: np.ndarray, hist_part: np.ndarray) -> bool:
    b = load_part - hist_part
    scale = np.linalg.norm(load_part) + np.linalg.norm(hist_part)
    return scale == 0.0 or np.linalg.norm(b) <= VANISH_RTOL * scale


def _unit(v: np.ndarray, M) -> np.ndarray:
    return v / np.sqrt(float(v @ (M @ v)))


def initial_factor(r: ResidualContraction, cfg: AlsConfig) -> np.ndarray:
    """Starting ``q`` for the alternating loop.

    ``load-factor`` takes the y-factor of the dominant load term; it falls
    back to a seeded random vector when that factor sees no residual.
    Raises ``ResidualVanished`` if nothing tried sees a residual.
    """
    oy, ox = r.ops_y, r.ops_x
    rng = np.random.default_rng(cfg.seed)
    candidates = []
    if cfg.init_strategy == "load-factor":
        fy = r.load.dominant_term()[1]
        if fy.any():
            candidates.append(fy)
    elif cfg.init_strategy == "ones":
        candidates.append(np.ones(oy.n))
    candidates.append(rng.standard_normal(oy.n))
    for q in candidates:
        if not _vanishes(*r.partial_x_parts(q)):
            return _unit(q, oy.M)
    p = rng.standard_normal(ox.n)
    if not _vanishes(*r.partial_y_parts(p)):
        # the residual is seen from the x side only; one y-solve recovers a q
        c = r.partial_y(p)
        q = spd_solve(_system(oy, ox.m(p, p), ox.a(p, p)), c, tol=cfg.solver_tol)
        return _unit(q, oy.M)
    raise ResidualVanished("residual vanishes on all initial test directions")


def _quotient(r: ResidualContraction, p, q) -> tuple[float, float]:
    """Rayleigh quotient and its relative rounding resolution."""
    num = r.apply(p, q)
    den = rank_one_energy(RankOneMode(p, q), r.ops_x, r.ops_y)
    if not den > 0.0:
        raise ContractError(f"rank-one energy {den!r} is not positive; operators are not SPD")
    resolution = ROUNDOFF_FACTOR * EPS * r.magnitude(p, q) / abs(num) if num else np.inf
    return num * num / den, resolution


def als_maximize(r: ResidualContraction, cfg: AlsConfig | None = None) -> AlsResult:
    """Alternating maximization of the Rayleigh quotient over rank-one modes.

    Each half-sweep solves
    ``(A_x q.M_y q + M_x q.A_y q) p = b_q`` (and its mirror for ``q``);
    every half-sweep maximizes the quotient over its own factor, so the
    recorded sequence is nondecreasing.  Stops once a full sweep improves
    the quotient by less than ``rq_rel_improvement_tol`` (relative).
    """
    cfg = cfg or AlsConfig()
    ox, oy = r.ops_x, r.ops_y
    q = initial_factor(r, cfg)
    history: list[float] = []
    violations = raw_violations = 0
    nx = ny = 0
    sweep_start = None
    converged = False
    p = None

    def record(value_and_resolution):
        # a decrease counts once it exceeds both the fixed relative slack and
        # the rounding resolution of the contraction (cancellation near convergence)
        nonlocal violations, raw_violations
        value, resolution = value_and_resolution
        if history and value < history[-1] * (1.0 - MONOTONE_SLACK):
            raw_violations += 1
            if value < history[-1] * (1.0 - max(MONOTONE_SLACK, resolution)):
                violations += 1
                log.warning("ALS quotient decreased: %.17g -> %.17g", history[-1], value)
        history.append(value)

    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        b = r.partial_x(q)
        p = spd_solve(_system(ox, oy.m(q, q), oy.a(q, q)), b, tol=cfg.solver_tol)
        nx += 1
        if cfg.renormalize:
            p = _unit(p, ox.M)
        record(_quotient(r, p, q))
        if sweep_start is None:
            sweep_start = history[-1]

        c = r.partial_y(p)
        q = spd_solve(_system(oy, ox.m(p, p), ox.a(p, p)), c, tol=cfg.solver_tol)
        ny += 1
        if cfg.renormalize:
            q = _unit(q, oy.M)
        record(_quotient(r, p, q))

        end = history[-1]
        if end == 0.0 or (end - sweep_start) <= cfg.rq_rel_improvement_tol * end:
            converged = True
            break
        sweep_start = end

    mode = RankOneMode(p, q, 1.0)
    if cfg.renormalize:
        mode = renormalize(mode, ox, oy)
    return AlsResult(mode, history[-1], sweeps, history, violations, nx, ny, converged,
                     raw_violations)


# -- outer loop ------------------------------------------------------------

def line_search_tau(r: ResidualContraction, w: RankOneMode) -> float:
    """Exact minimizer ``<r, w> / a(w, w)`` of the energy error along ``w``."""
    aw = rank_one_energy(w, r.ops_x, r.ops_y)
    return w.scale * r.apply(w.p, w.q) / aw


def estimate_theta(r: ResidualContraction, w: RankOneMode, K: KroneckerSumOperator | None = None,
                   dual_sq: float | None = None) -> float:
    """Achieved cosine ``<r, w> / (||r||_{H'} sqrt(a(w, w)))``.

    Pass ``dual_sq`` to reuse an already computed squared dual norm.
    """
    if dual_sq is None:
        if K is None:
            K = KroneckerSumOperator.from_pairs(r.ops_x, r.ops_y)
        dual_sq = dual_norm_squared(K, r.to_matrix())
    if dual_sq <= 0.0:
        raise ContractError("theta is undefined for a zero residual")
    aw = rank_one_energy(w, r.ops_x, r.ops_y)
    return w.scale * r.apply(w.p, w.q) / (np.sqrt(dual_sq) * np.sqrt(aw))


def greedy_solve(problem, cfg: GreedyConfig | None = None, als_cfg: AlsConfig | None = None,
                 diagnostics: Diagnostics | None = None, on_step=None) -> GreedyResult:
    """Greedy rank-one PGD from ``u_0 = 0``.

    ``problem`` needs ``ops_x``, ``ops_y`` and ``load``.  Stops with
    ``converged`` once the realized decrease falls to
    ``eps**2 * a(u_N, u_N)`` (``absolute_floor`` while ``u_N = 0``),
    ``stagnated`` when two consecutive decreases are nearly equal and tiny,
    or ``max_modes``.  ``on_step`` is called with every new record.
    """
    cfg = cfg or GreedyConfig()
    als_cfg = als_cfg or AlsConfig()
    diagnostics = diagnostics or Diagnostics()
    ox, oy, load = problem.ops_x, problem.ops_y, problem.load

    u = SeparableFunction(ox, oy)
    records: list[IterationRecord] = []
    K = KroneckerSumOperator.from_pairs(ox, oy) if diagnostics.needs_dual else None

    def dual(rc: ResidualContraction) -> float:
        return dual_norm_squared(K, rc.to_matrix(), tol=diagnostics.dual_norm_tol,
                                 method=diagnostics.dual_norm_method)

    r = ResidualContraction(load, u)
    err = dual(r) if K is not None else None
    err0 = err
    energy_u = 0.0
    status = "max_modes"
    viol = raw_viol = 0

    for N in range(1, cfg.max_modes + 1):
        try:
            als = als_maximize(r, als_cfg)
        except ResidualVanished:
            status = "converged"
            break
        except (ContractError, ConvergenceError, np.linalg.LinAlgError) as exc:
            raise SolveError(N, exc) from exc
        viol += als.violations
        raw_viol += als.raw_violations

        w = als.mode
        if cfg.orthogonalize:
            res = orthogonalize_new_mode(w, u)
            if not res.collapsed and als_cfg.renormalize:
                w = renormalize(res.mode, ox, oy)
            elif not res.collapsed:
                w = res.mode
        load_part, hist_part = r.parts(w.p, w.q)
        num = w.scale * (load_part - hist_part)
        if num < 0.0:
            w = w.scaled(-1.0)
            num = -num
        aw = rank_one_energy(w, ox, oy)
        delta_E = num * num / aw
        threshold = cfg.eps ** 2 * energy_u if energy_u > 0.0 else cfg.absolute_floor
        if delta_E <= threshold:
            status = "converged"
            break

        tau = num / aw
        # a(u_N, w) = w.scale * hist_part
        energy_u += 2.0 * tau * w.scale * hist_part + tau * tau * aw
        u.append(w.scaled(tau))

        rec = IterationRecord(N=N, delta_E=delta_E, rq=als.rq, tau=tau, sweeps=als.sweeps,
                              rq_violations=als.violations, x_solves=als.x_solves,
                              y_solves=als.y_solves)
        r = ResidualContraction(load, u)
        if K is not None:
            err_next = dual(r)
            if diagnostics.theta:
                rec.theta_hat = num / (np.sqrt(err) * np.sqrt(aw)) if err > 0 else None
            if diagnostics.dual_norm:
                rec.energy_error_sq = err_next
            err = err_next
        records.append(rec)
        log.debug("step %d: dE=%.3e tau=%.3e sweeps=%d", N, delta_E, tau, als.sweeps)
        if on_step is not None:
            on_step(rec)

        if len(records) >= 2:
            prev = records[-2].delta_E
            floor = cfg.stagnation_factor * cfg.eps ** 2 * energy_u
            close = abs(delta_E - prev) <= cfg.stagnation_ratio * max(delta_E, prev)
            if close and delta_E <= floor and prev <= floor:
                status = "stagnated"
                break

    return GreedyResult(u, records, status, err0 if diagnostics.dual_norm else None, viol, raw_viol)
