"""Time stepping for the generalized time-space fractional diffusion equation.

Two engines share the spatial discretization:

* the direct scheme, with generalized L1 coefficients and the full history sum
  (O(j N) work at level j);
* the fast scheme for ``lambda(t) = exp(-b t)``, which splits the Caputo
  integral into a local part and a history part carried by one accumulator per
  SOE node (O(N n_exp) work per level).

The interior system of every level is solved by BiCGSTAB with a configurable
preconditioner, by the Gohberg-Semencul inverse when the matrix never changes,
or by a dense LU solve.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
from scipy import special

from ._validation import check_closed, check_half_open, check_open_interval, check_positive
from .errors import LinearSolveError
from .kernels import (
    L1Coefficients,
    SoeApproximation,
    WeightingFunction,
    WsgdWeights,
    l1_coefficients,
    local_weight,
    soe_build,
    wsgd_weights,
)
from .krylov import SolveConfig, bicgstab
from .toeplitz import (
    SystemOperator,
    build_banded_preconditioner,
    build_gsf_inverse,
    build_skew_circulant_preconditioner,
)

__all__ = [
    "ProblemSpec",
    "Discretization",
    "SolutionField",
    "HistoryState",
    "RunReport",
    "discretize",
    "step_direct",
    "step_fast",
    "solve",
]

log = logging.getLogger(__name__)

SCHEMES = ("direct", "fast")

# BiCGSTAB results whose normwise backward error is below this many ulps are
# accepted even when rtol was not reached
_FLOOR_ULPS = 64


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous problem on ``[x_left, x_right] x [0, horizon]``.

    ``xi(x, t)``, ``source(x, t)`` and ``initial(x)`` must accept an array of
    positions; ``left(t)`` and ``right(t)`` give the Dirichlet data. Set
    ``xi_constant`` when ``xi`` is known to be constant in space and time, to
    skip detection on the grid.
    """

    x_left: float
    x_right: float
    horizon: float
    gamma: float
    alpha: float
    p: float
    lam: WeightingFunction
    xi: Callable
    source: Callable
    initial: Callable
    left: Callable
    right: Callable
    xi_constant: Optional[bool] = None

    def __post_init__(self):
        if not self.x_right > self.x_left:
            raise ValueError("x_right must exceed x_left")
        check_positive(self.horizon, "horizon")
        check_open_interval(self.gamma, 0.0, 1.0, "gamma")
        check_half_open(self.alpha, 1.0, 2.0, "alpha")
        check_closed(self.p, 0.0, 1.0, "p")


@dataclass(frozen=True)
class Discretization:
    N: int
    M: int
    h: float
    tau: float
    x: np.ndarray
    t: np.ndarray
    w: WsgdWeights
    scheme: str
    l1: Optional[L1Coefficients] = None
    soe: Optional[SoeApproximation] = None
    local_weight: Optional[float] = None

    @property
    def interior(self) -> np.ndarray:
        return self.x[1:-1]


def discretize(spec: ProblemSpec, N: int, M: int, scheme: str = "direct",
               soe_epsilon: float = 1e-9) -> Discretization:
    """Uniform mesh with ``N`` spatial intervals and ``M`` time steps.

    The fast scheme builds its SOE on ``[tau, T]``.
    """
    N, M = int(N), int(M)
    if N < 5:
        raise ValueError(f"N must be >= 5, got {N}")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    h = (spec.x_right - spec.x_left) / N
    tau = spec.horizon / M
    x = spec.x_left + h * np.arange(N + 1)
    x[-1] = spec.x_right
    t = tau * np.arange(M + 1)
    t[-1] = spec.horizon
    w = wsgd_weights(spec.alpha, N)

    if scheme == "direct":
        return Discretization(N, M, h, tau, x, t, w, scheme,
                              l1=l1_coefficients(spec.gamma, spec.lam, tau, M))
    if not spec.lam.is_exponential:
        raise ValueError("the fast scheme requires lambda(t) = exp(-b t)")
    soe = None
    if M > 1:
        soe = soe_build(spec.gamma, tau, spec.horizon, soe_epsilon)
    return Discretization(N, M, h, tau, x, t, w, scheme, soe=soe,
                          local_weight=local_weight(spec.gamma, spec.lam.b, tau))


@dataclass
class SolutionField:
    """Grid values ``u[k, i]`` at time levels ``levels[k]`` and nodes ``x[i]``.

    In full mode every level ``0..M`` is stored; in streaming mode only the
    final one.
    """

    x: np.ndarray
    t: np.ndarray
    levels: np.ndarray
    u: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.u[-1]

    @property
    def is_full(self) -> bool:
        return len(self.levels) == len(self.t)

    def level(self, j: int) -> np.ndarray:
        k = np.searchsorted(self.levels, j)
        if k >= len(self.levels) or self.levels[k] != j:
            raise KeyError(f"time level {j} is not stored")
        return self.u[k]


@dataclass
class HistoryState:
    """Accumulators of the fast scheme, one row per SOE node, plus two levels.

    ``acc`` holds the history integrals at the last completed level;
    ``current``/``previous`` are the interior values at that level and the one
    before it.
    """

    acc: np.ndarray
    current: np.ndarray
    previous: Optional[np.ndarray] = None
    level: int = 0


@dataclass
class RunReport:
    scheme: str
    path: str
    preconditioner: str
    N: int
    M: int
    iterations: list = field(default_factory=list)
    wall_time: float = 0.0
    n_exp: int = 0
    stored_scalars: int = 0
    solver_builds: int = 0
    floor_limited: int = 0

    @property
    def iters_avg(self) -> float:
        return float(np.mean(self.iterations)) if self.iterations else 0.0

    @property
    def mem_bytes(self) -> int:
        return 8 * self.stored_scalars


# --------------------------------------------------------------------------
# linear solves


def _xi_constant(spec: ProblemSpec, disc: Discretization) -> bool:
    if spec.xi_constant is not None:
        return spec.xi_constant
    xs = disc.interior
    stride = max(1, disc.M // 64)
    levels = list(range(1, disc.M + 1, stride)) + [disc.M]
    ref = np.asarray(spec.xi(xs, disc.t[1]), dtype=float) * np.ones_like(xs)
    scale = np.max(np.abs(ref))
    for j in levels:
        vals = np.asarray(spec.xi(xs, disc.t[j]), dtype=float)
        if np.max(np.abs(vals - ref[0])) > 1e-14 * scale:
            return False
    return True


class LevelSolver:
    """Solves ``M^{(j+1)} u = rhs`` for one run, reusing whatever does not change."""

    def __init__(self, spec: ProblemSpec, disc: Discretization, cfg: SolveConfig, c0: float):
        self.spec, self.disc, self.cfg = spec, disc, cfg
        self.constant = _xi_constant(spec, disc)
        xi1 = self._xi(1)
        self.base = SystemOperator.build(c0, disc.h, spec.alpha, spec.p, xi1, disc.w,
                                         time_independent=self.constant)
        if cfg.direct:
            self.path = "direct"
        elif self.constant and (cfg.use_gsf or cfg.preconditioner == "exact_gsf"):
            self.path = "gsf"
        elif cfg.preconditioner == "exact_gsf":
            raise ValueError("exact_gsf needs a diffusion coefficient constant in x and t")
        else:
            self.path = "bicgstab"
        self.builds = 0
        self.floor_limited = 0
        self._fixed = None
        self._fixed_scalars = 0

    def _xi(self, j):
        xs = self.disc.interior
        return np.asarray(self.spec.xi(xs, self.disc.t[j]), dtype=float) * np.ones_like(xs)

    def operator(self, j: int) -> SystemOperator:
        if self.constant:
            return self.base
        return self.base.with_coefficients(diag_xi=self._xi(j))

    def _preconditioner(self, op):
        kind = self.cfg.preconditioner
        if kind == "none":
            return None, 0
        if kind == "skew_circulant":
            f = build_skew_circulant_preconditioner(op)
        else:
            f = build_banded_preconditioner(op, min(self.cfg.bandwidth, op.n - 1))
        return f.solve, f.stored_scalars()

    def stored_scalars(self) -> int:
        return self.base.structure.stored_scalars() + self.base.n + self._fixed_scalars

    @staticmethod
    def _at_rounding_floor(op, res, rhs) -> bool:
        """Normwise backward error ``||r|| / (||A|| ||x|| + ||b||)`` within a few ulps."""
        b_norm = np.linalg.norm(rhs)
        r_norm = res.final_relative_residual * b_norm
        denom = op.norm_bound() * np.linalg.norm(res.x) + b_norm
        return r_norm <= _FLOOR_ULPS * np.finfo(float).eps * denom

    def solve(self, j: int, rhs: np.ndarray):
        """Interior values at level ``j``; returns ``(u, iterations)``."""
        if self.path == "direct":
            if self._fixed is None or not self.constant:
                self._fixed = scipy.linalg.lu_factor(self.operator(j).to_dense())
                self._fixed_scalars = self._fixed[0].size
                self.builds += 1
            return scipy.linalg.lu_solve(self._fixed, rhs), 0.0
        if self.path == "gsf":
            if self._fixed is None:
                self._fixed = build_gsf_inverse(self.base)
                self._fixed_scalars = self._fixed.stored_scalars()
                self.builds += 1
            return self._fixed.apply(rhs), 0.0

        op = self.operator(j)
        if self._fixed is None or not self.constant:
            self._fixed = self._preconditioner(op)
            self._fixed_scalars = self._fixed[1]
            self.builds += 1
        res = bicgstab(op.apply, self._fixed[0], rhs, cfg=self.cfg)
        if not res.converged and res.breakdown is None and self._at_rounding_floor(op, res, rhs):
            # rtol is below what the residual can resolve in double precision
            self.floor_limited += 1
            return res.x, res.iterations
        if not res.converged:
            why = f"breakdown ({res.breakdown})" if res.breakdown else "no convergence"
            raise LinearSolveError(
                f"BiCGSTAB {why} at time level {j}: relative residual "
                f"{res.final_relative_residual:.3e} after {res.iterations} iterations",
                level=j, result=res,
            )
        return res.x, res.iterations


def _boundary_terms(spec, disc, j, xi):
    """Contribution of the known boundary values at level ``j`` to the interior rows."""
    N, w = disc.N, disc.w.w
    uL = float(spec.left(disc.t[j]))
    uR = float(spec.right(disc.t[j]))
    i = np.arange(1, N)
    left_sum = w[i + 1] * uL
    left_sum[-1] += w[0] * uR
    right_sum = w[N - i + 1] * uR
    right_sum[0] += w[0] * uL
    return xi * disc.h ** -spec.alpha * (spec.p * left_sum + (1 - spec.p) * right_sum)


def _boundary_values(spec, disc, j):
    return float(spec.left(disc.t[j])), float(spec.right(disc.t[j]))


def _initial_level(spec, disc):
    u0 = np.asarray(spec.initial(disc.x), dtype=float) * np.ones_like(disc.x)
    u0[0], u0[-1] = _boundary_values(spec, disc, 0)
    return u0


def _source(spec, disc, j):
    xs = disc.interior
    return np.asarray(spec.source(xs, disc.t[j]), dtype=float) * np.ones_like(xs)


# --------------------------------------------------------------------------
# steppers


def step_direct(field: SolutionField, j: int, spec: ProblemSpec, disc: Discretization,
                cfg: SolveConfig = SolveConfig(), solver: Optional[LevelSolver] = None):
    """Advance the direct scheme from level ``j`` to ``j + 1``.

    ``field`` must hold every level ``0..j`` (full storage); level ``j + 1`` is
    written in place. Returns the BiCGSTAB iteration count.
    """
    if disc.l1 is None:
        raise ValueError("step_direct needs a discretization built for the direct scheme")
    if not field.is_full:
        raise ValueError("the direct scheme needs every previous level")
    c = disc.l1.c
    if solver is None:
        solver = LevelSolver(spec, disc, cfg, c[0])
    U = field.u
    n = j + 1
    rhs = c[j] * U[0, 1:-1]
    if j >= 1:
        diffs = c[:j] - c[1 : j + 1]  # c_{s-1} - c_s, s = 1..j
        rhs = rhs + diffs @ U[j:0:-1, 1:-1]
    xi = solver.operator(n).diag_xi
    rhs = rhs + _source(spec, disc, n) + _boundary_terms(spec, disc, n, xi)
    try:
        interior, iters = solver.solve(n, rhs)
    except LinearSolveError as exc:
        exc.level = n
        raise
    U[n, 1:-1] = interior
    U[n, 0], U[n, -1] = _boundary_values(spec, disc, n)
    return iters


def step_fast(state: HistoryState, spec: ProblemSpec, disc: Discretization,
              cfg: SolveConfig = SolveConfig(), solver: Optional[LevelSolver] = None):
    """Advance the fast scheme by one level, updating ``state`` in place.

    Returns ``(u, iterations)`` where ``u`` is the full new level including
    boundary values.
    """
    if disc.local_weight is None:
        raise ValueError("step_fast needs a discretization built for the fast scheme")
    lw = disc.local_weight
    if solver is None:
        solver = LevelSolver(spec, disc, cfg, lw)
    n = state.level + 1
    rhs = lw * state.current
    if n >= 2:
        soe = disc.soe
        st = soe.nodes + spec.lam.b
        decay = np.exp(-st * disc.tau)
        gain = decay * (-np.expm1(-st * disc.tau)) / (disc.tau * st)
        state.acc *= decay[:, None]
        state.acc += np.multiply.outer(gain, state.current - state.previous)
        history = (soe.weights @ state.acc) / special.gamma(1 - spec.gamma)
        rhs = rhs - history
    xi = solver.operator(n).diag_xi
    rhs = rhs + _source(spec, disc, n) + _boundary_terms(spec, disc, n, xi)
    try:
        interior, iters = solver.solve(n, rhs)
    except LinearSolveError as exc:
        exc.level = n
        raise
    state.previous, state.current, state.level = state.current, interior, n
    u = np.empty(disc.N + 1)
    u[1:-1] = interior
    u[0], u[-1] = _boundary_values(spec, disc, n)
    return u, iters


def solve(spec: ProblemSpec, disc: Discretization, cfg: SolveConfig = SolveConfig(),
          store: str = "full"):
    """Run the scheme of ``disc`` over all ``M`` levels.

    ``store`` is ``"full"`` (every level) or ``"final"`` (streaming; only the
    direct scheme still keeps its history internally). Returns
    ``(SolutionField, RunReport)``.
    """
    if store not in ("full", "final"):
        raise ValueError("store must be 'full' or 'final'")
    started = time.perf_counter()
    N, M = disc.N, disc.M
    u0 = _initial_level(spec, disc)

    if disc.scheme == "direct":
        solver = LevelSolver(spec, disc, cfg, disc.l1.c[0])
        U = np.empty((M + 1, N + 1))
        U[0] = u0
        field = SolutionField(disc.x, disc.t, np.arange(M + 1), U)
        iterations = [step_direct(field, j, spec, disc, cfg, solver) for j in range(M)]
        history_scalars = U.size
        n_exp = 0
        if store == "final":
            field = SolutionField(disc.x, disc.t, np.array([M]), U[-1:].copy())
    else:
        solver = LevelSolver(spec, disc, cfg, disc.local_weight)
        n_exp = disc.soe.n_exp if disc.soe is not None else 0
        state = HistoryState(np.zeros((n_exp, N - 1)), u0[1:-1].copy())
        if store == "full":
            U = np.empty((M + 1, N + 1))
            U[0] = u0
        iterations = []
        u = u0
        for j in range(M):
            u, iters = step_fast(state, spec, disc, cfg, solver)
            iterations.append(iters)
            if store == "full":
                U[j + 1] = u
        if store == "full":
            field = SolutionField(disc.x, disc.t, np.arange(M + 1), U)
        else:
            field = SolutionField(disc.x, disc.t, np.array([M]), u[None, :].copy())
        history_scalars = (n_exp + 2) * (N - 1)

    report = RunReport(
        scheme=disc.scheme, path=solver.path, preconditioner=cfg.preconditioner,
        N=N, M=M, iterations=iterations, wall_time=time.perf_counter() - started,
        n_exp=n_exp, stored_scalars=history_scalars + solver.stored_scalars(),
        solver_builds=solver.builds, floor_limited=solver.floor_limited,
    )
    log.debug("solved %s N=%d M=%d path=%s iters=%.1f in %.2fs", disc.scheme, N, M,
              solver.path, report.iters_avg, report.wall_time)
    return field, report
