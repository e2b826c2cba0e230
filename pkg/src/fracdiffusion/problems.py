"""Manufactured test problems, error norms and convergence rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import special

from .kernels import WeightingFunction
from .krylov import SolveConfig
from .solver import ProblemSpec, SolutionField, discretize, solve

__all__ = [
    "ManufacturedProblem",
    "ErrorReport",
    "example1",
    "example2",
    "exampleA1",
    "smooth_bump_source_terms",
    "example2_q",
    "run_problem",
    "compute_errors",
    "convergence_rate",
]


@dataclass(frozen=True)
class ManufacturedProblem:
    """A problem with known (or reconstructible) solution.

    ``exact(x, t)`` is the closed-form solution when one exists. Problems with a
    singular time behaviour instead carry ``auxiliary``, a zero-data problem for
    the remainder ``v``, and ``correction(x, t)``, the known nonsmooth part, so
    that ``u = correction + v``.
    """

    spec: ProblemSpec
    example: str
    params: dict
    exact: Optional[Callable] = None
    auxiliary: Optional[ProblemSpec] = None
    correction: Optional[Callable] = field(default=None, repr=False)


def _gamma_ratio(k: int, alpha: float) -> float:
    # Riemann-Liouville derivative of x^k is Gamma(k+1)/Gamma(k+1-alpha) x^(k-alpha)
    return special.gamma(k + 1) / special.gamma(k + 1 - alpha)


def _two_sided(coeffs, alpha, p, x, length):
    """``sum_k c_k Gamma-ratio [p x^(k-alpha) + (1-p)(length-x)^(k-alpha)]``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for k, c in coeffs:
        r = _gamma_ratio(k, alpha)
        out = out + c * r * (p * x ** (k - alpha) + (1 - p) * (length - x) ** (k - alpha))
    return out


def smooth_bump_source_terms(alpha: float, p: float, x) -> np.ndarray:
    """Two-sided fractional derivative of ``x^2 (2-x)^2`` on ``[0, 2]``."""
    return _two_sided([(2, 4.0), (3, -4.0), (4, 1.0)], alpha, p, x, 2.0)


def example2_q(alpha: float, p: float, x) -> np.ndarray:
    """Two-sided fractional derivative of ``x^3 (1-x)^3`` on ``[0, 1]``."""
    return _two_sided([(3, 1.0), (4, -3.0), (5, 3.0), (6, -1.0)], alpha, p, x, 1.0)


def _zero(t):
    return 0.0


def _smooth_example(gamma, alpha, b, p, xi, name):
    if not b > 0:
        raise ValueError(f"b must be positive for {name}, got {b}")
    bump = lambda x: x**2 * (2 - x) ** 2

    def g(t):
        # 1 + (2 - (2 + 2bt + b^2 t^2) e^{-bt}) / b^3 without cancellation
        return 1.0 + 2.0 * special.gammainc(3, b * t) / b**3

    def exact(x, t):
        return g(t) * bump(np.asarray(x, dtype=float))

    def source(x, t):
        x = np.asarray(x, dtype=float)
        time_part = 2.0 * t ** (3 - gamma) * math.exp(-b * t) / special.gamma(4 - gamma)
        return time_part * bump(x) - g(t) * xi(x, t) * smooth_bump_source_terms(alpha, p, x)

    spec = ProblemSpec(
        x_left=0.0, x_right=2.0, horizon=1.0, gamma=gamma, alpha=alpha, p=p,
        lam=WeightingFunction.tempered(b), xi=xi, source=source,
        initial=lambda x: bump(np.asarray(x, dtype=float)), left=_zero, right=_zero,
        xi_constant=False,
    )
    return ManufacturedProblem(spec, name, dict(gamma=gamma, alpha=alpha, b=b, p=p), exact=exact)


def example1(gamma: float, alpha: float, b: float, p: float) -> ManufacturedProblem:
    """Smooth solution ``g(t) x^2 (2-x)^2`` with ``xi = 1 + x^2 + sin t`` on ``[0,2]x[0,1]``.

    ``g(t) = 1 + int_0^t s^2 e^{-bs} ds``.
    """
    return _smooth_example(gamma, alpha, b, p, lambda x, t: 1.0 + x**2 + math.sin(t), "example1")


def exampleA1(gamma: float, alpha: float, b: float, p: float) -> ManufacturedProblem:
    """As :func:`example1` with ``xi = 10 (1/2 + x^2 + sin t)``."""
    return _smooth_example(gamma, alpha, b, p,
                           lambda x, t: 10.0 * (0.5 + x**2 + math.sin(t)), "exampleA1")


def example2(gamma: float, alpha: float, b: float, p: float, xi_const: float = 5.0) -> ManufacturedProblem:
    """Solution with a ``sqrt(t)`` singularity on ``[0,1]^2``, constant ``xi``.

    ``u = 5x^3(1-x)^3 [1 - sqrt(t) e^{-bt} / Gamma(1.5)] + v`` where ``v``
    solves a problem with zero initial and boundary data. ``u`` itself has no
    closed form; errors come from two-grid comparisons.
    """
    if not xi_const > 0:
        raise ValueError(f"xi_const must be positive, got {xi_const}")
    if b < 0:
        raise ValueError(f"b must be >= 0, got {b}")
    shape = lambda x: 5.0 * np.asarray(x, dtype=float) ** 3 * (1 - np.asarray(x, dtype=float)) ** 3
    xi = lambda x, t: xi_const + 0.0 * np.asarray(x, dtype=float)

    def factor(t):
        return 1.0 - math.sqrt(t) * math.exp(-b * t) / special.gamma(1.5)

    def correction(x, t):
        return shape(x) * factor(t)

    def v_source(x, t):
        x = np.asarray(x, dtype=float)
        if t == 0:
            time_part = 0.0
        else:
            time_part = (t ** (0.5 - gamma) / special.gamma(1.5 - gamma)
                         - b * t ** (1.5 - gamma) / special.gamma(2.5 - gamma)) * math.exp(-b * t)
        return shape(x) * time_part + 5.0 * xi_const * example2_q(alpha, p, x) * factor(t)

    lam = WeightingFunction.tempered(b)
    common = dict(x_left=0.0, x_right=1.0, horizon=1.0, gamma=gamma, alpha=alpha, p=p,
                  lam=lam, xi=xi, left=_zero, right=_zero, xi_constant=True)
    spec = ProblemSpec(source=lambda x, t: 0.0 * np.asarray(x, dtype=float), initial=shape, **common)
    aux = ProblemSpec(source=v_source, initial=lambda x: 0.0 * np.asarray(x, dtype=float), **common)
    params = dict(gamma=gamma, alpha=alpha, b=b, p=p, xi=xi_const)
    return ManufacturedProblem(spec, "example2", params, auxiliary=aux, correction=correction)


def run_problem(problem: ManufacturedProblem, N: int, M: int, scheme: str = "direct",
                cfg: SolveConfig = SolveConfig(), soe_epsilon: float = 1e-9, store: str = "full"):
    """Solve ``problem`` on an ``N x M`` grid; returns ``(SolutionField, RunReport)``.

    For problems with an auxiliary part the auxiliary problem is solved and the
    known correction is added back, so the field always approximates ``u``.
    """
    target = problem.auxiliary or problem.spec
    disc = discretize(target, N, M, scheme, soe_epsilon)
    field_, report = solve(target, disc, cfg, store)
    if problem.correction is not None:
        u = field_.u.copy()
        for k, j in enumerate(field_.levels):
            u[k] += problem.correction(field_.x, field_.t[j])
        field_ = SolutionField(field_.x, field_.t, field_.levels, u)
    return field_, report


@dataclass(frozen=True)
class ErrorReport:
    """Maximum over stored levels of the max norm and of ``sqrt(h sum E_i^2)``.

    ``final_inf``/``final_l2`` are the same norms at the last level only.
    """

    error_inf: float
    error_l2: float
    final_inf: float
    final_l2: float


def _ratio(fine: int, coarse: int, what: str) -> int:
    if fine % coarse:
        raise ValueError(f"{what} grids are not nested ({coarse} vs {fine} intervals)")
    return fine // coarse


def compute_errors(numeric: SolutionField,
                   exact: Union[ManufacturedProblem, SolutionField, Callable]) -> ErrorReport:
    """Errors of ``numeric`` against a manufactured solution or a finer field.

    A finer reference field must contain the coarse grid: its spatial and
    temporal interval counts are integer multiples of the coarse ones and it
    must store every coarse level being compared.
    """
    x, t = numeric.x, numeric.t
    h = x[1] - x[0]
    if isinstance(exact, ManufacturedProblem):
        if exact.exact is None:
            raise ValueError(f"{exact.example} has no closed-form solution; use a finer field")
        exact = exact.exact
    if isinstance(exact, SolutionField):
        ref = exact
        if not (np.isclose(ref.x[0], x[0]) and np.isclose(ref.x[-1], x[-1])
                and np.isclose(ref.t[-1], t[-1])):
            raise ValueError("grid mismatch: reference covers a different domain")
        rx = _ratio(len(ref.x) - 1, len(x) - 1, "spatial")
        rt = _ratio(len(ref.t) - 1, len(t) - 1, "temporal")
        values = lambda j: ref.level(j * rt)[::rx]
    elif callable(exact):
        values = lambda j: exact(x, t[j])
    else:
        raise TypeError("exact must be a ManufacturedProblem, SolutionField or callable")

    inf_norms, l2_norms = [], []
    for k, j in enumerate(numeric.levels):
        e = numeric.u[k] - values(int(j))
        inf_norms.append(np.max(np.abs(e)))
        l2_norms.append(math.sqrt(h * np.sum(e[1:-1] ** 2)))
    return ErrorReport(float(max(inf_norms)), float(max(l2_norms)),
                       float(inf_norms[-1]), float(l2_norms[-1]))


def convergence_rate(e_coarse: float, e_fine: float, ratio: float = 2.0) -> float:
    """Observed order ``log(e_coarse / e_fine) / log(ratio)``."""
    if not (e_coarse > 0 and e_fine > 0):
        raise ValueError("errors must be positive")
    if not ratio > 1:
        raise ValueError("ratio must exceed 1")
    return math.log(e_coarse / e_fine) / math.log(ratio)
