"""Discretization coefficients for the generalized time-space fractional operator.

Spatial part: weighted and shifted Grunwald (WSGD) weights for two-sided
Riemann-Liouville derivatives of order ``alpha`` in (1, 2].

Temporal part: generalized L1 coefficients for the Caputo derivative of order
``gamma`` in (0, 1) with a positive, non-increasing weighting function
``lambda(t)``, the local weight of the fast scheme and a certified
sum-of-exponentials (SOE) approximation of the kernel ``t**-gamma``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize, special

from ._validation import check_half_open, check_open_interval, check_positive
from .errors import CertificationError, QuadratureError

__all__ = [
    "WeightingFunction",
    "WsgdWeights",
    "L1Coefficients",
    "SoeApproximation",
    "wsgd_weights",
    "w2_value",
    "alpha0",
    "l1_coefficients",
    "soe_build",
    "local_weight",
]


# --------------------------------------------------------------------------
# weighting function lambda(t)


@dataclass(frozen=True)
class WeightingFunction:
    """Weight ``lambda(t)`` inside the generalized Caputo kernel.

    Use the constructors :meth:`constant`, :meth:`tempered` and :meth:`custom`.
    ``kind`` is one of ``"constant"``, ``"tempered"`` or ``"custom"``; ``b`` is
    the decay rate of the tempered weight ``exp(-b t)`` (0 for the constant one).
    """

    kind: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    b: float = 0.0

    @classmethod
    def constant(cls) -> WeightingFunction:
        return cls("constant", lambda t: np.ones_like(np.asarray(t, dtype=float)), 0.0)

    @classmethod
    def tempered(cls, b: float) -> WeightingFunction:
        b = float(b)
        if b < 0:
            raise ValueError(f"tempered decay rate must be >= 0, got {b}")
        return cls("tempered", lambda t: np.exp(-b * np.asarray(t, dtype=float)), b)

    @classmethod
    def custom(cls, func: Callable) -> WeightingFunction:
        return cls("custom", func, math.nan)

    def __call__(self, t):
        return self.func(t)

    @property
    def is_exponential(self) -> bool:
        """True when ``lambda(t) = exp(-b t)`` for some ``b >= 0``."""
        return self.kind in ("constant", "tempered")


# --------------------------------------------------------------------------
# WSGD weights


@dataclass(frozen=True)
class WsgdWeights:
    alpha: float
    w: np.ndarray
    kappa1: float
    kappa0: float
    kappa_m1: float

    @property
    def count(self) -> int:
        return len(self.w) - 1


def _grunwald(alpha: float, count: int) -> np.ndarray:
    # g_k = (-1)^k binom(alpha, k) by recurrence; no Gamma overflow for large k
    g = np.empty(count + 1)
    g[0] = 1.0
    for k in range(1, count + 1):
        g[k] = (1.0 - (alpha + 1.0) / k) * g[k - 1]
    return g


def wsgd_weights(alpha: float, count: int) -> WsgdWeights:
    """WSGD weights ``w_0, ..., w_count`` for order ``alpha`` in (1, 2]."""
    alpha = check_half_open(alpha, 1.0, 2.0, "alpha")
    count = int(count)
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")

    k1 = (alpha**2 + 3 * alpha + 2) / 12
    k0 = (4 - alpha**2) / 6
    km1 = (alpha**2 - 3 * alpha + 2) / 12

    g = _grunwald(alpha, count)
    w = k1 * g
    w[1:] += k0 * g[:-1]
    w[2:] += km1 * g[:-2]
    w.flags.writeable = False
    return WsgdWeights(alpha, w, k1, k0, km1)


def w2_value(alpha: float) -> float:
    """Closed form of the WSGD weight ``w_2`` as a quartic in ``alpha``."""
    a = float(alpha)
    return a**4 / 24 + a**3 / 4 + a**2 / 24 - a + 1 / 6


@functools.cache
def alpha0() -> float:
    """Root of :func:`w2_value` in (1, 2); ``w_2 >= 0`` exactly for ``alpha >= alpha0()``."""
    return optimize.brentq(w2_value, 1.1, 2.0, xtol=1e-15)


# --------------------------------------------------------------------------
# generalized L1 coefficients


@dataclass(frozen=True)
class L1Coefficients:
    """Coefficients ``c_0 > c_1 > ...`` of the generalized L1 formula.

    The discrete derivative at ``t_{j+1}`` is ``sum_s c_{j-s} (u^{s+1} - u^s)``.
    """

    gamma: float
    tau: float
    c: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def lower_bounds(self, lam: WeightingFunction) -> np.ndarray:
        """``lambda(t_{l+1/2}) / (Gamma(1-gamma) t_{l+1}^gamma)`` for each ``l``."""
        ell = np.arange(len(self.c))
        t_mid = (ell + 0.5) * self.tau
        t_next = (ell + 1.0) * self.tau
        return lam(t_mid) / (special.gamma(1 - self.gamma) * t_next**self.gamma)


def _power_diff(q: float, ell: np.ndarray) -> np.ndarray:
    """``(l+1)^q - l^q`` without cancellation for large ``l``."""
    out = np.ones(len(ell))
    pos = ell > 0
    lp = ell[pos].astype(float)
    out[pos] = lp**q * np.expm1(q * np.log1p(1.0 / lp))
    return out


def l1_coefficients(
    gamma: float, lam: WeightingFunction, tau: float, steps: int
) -> L1Coefficients:
    """Generalized L1 coefficients ``c_0 .. c_{steps-1}``.

    ``lam`` is sampled at the integer nodes ``t_l`` and midpoints ``t_{l+1/2}``.
    """
    gamma = check_open_interval(gamma, 0.0, 1.0, "gamma")
    tau = check_positive(tau, "tau")
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be >= 1")

    ell = np.arange(steps)
    a = _power_diff(1 - gamma, ell)
    b = _power_diff(2 - gamma, ell) / (2 - gamma) - 0.5 * (
        (ell + 1.0) ** (1 - gamma) + ell ** (1 - gamma)
    )

    lam_nodes = np.asarray(lam(np.arange(steps + 1) * tau), dtype=float)
    lam_mid = np.asarray(lam((ell + 0.5) * tau), dtype=float)
    if np.any(lam_nodes <= 0) or np.any(lam_mid <= 0):
        raise ValueError("weighting function must be positive on [0, T]")
    if np.any(np.diff(lam_nodes) > 1e-14 * lam_nodes[:-1]):
        raise ValueError("weighting function must be non-increasing on [0, T]")

    c = tau**-gamma / special.gamma(2 - gamma) * (
        lam_mid * a + (lam_nodes[:-1] - lam_nodes[1:]) * b
    )
    for arr in (a, b, c):
        arr.flags.writeable = False
    return L1Coefficients(gamma, tau, c, a, b)


def local_weight(gamma: float, b: float, tau: float) -> float:
    r"""Coefficient of ``u^{j} - u^{j-1}`` in the local part of the fast scheme.

    .. math::

        \frac{e^{-b\tau}\tau^{1-\gamma} + b\int_0^\tau e^{-b\theta}\theta^{1-\gamma}\,d\theta}
             {\tau\,\Gamma(2-\gamma)}
    """
    gamma = check_open_interval(gamma, 0.0, 1.0, "gamma")
    tau = check_positive(tau, "tau")
    b = float(b)
    if b < 0:
        raise ValueError(f"b must be >= 0, got {b}")

    integral = 0.0
    if b > 0:
        # algebraic endpoint weight theta^(1-gamma) handled by QAWS
        res = integrate.quad(
            lambda th: math.exp(-b * th), 0.0, tau,
            weight="alg", wvar=(1 - gamma, 0.0),
            epsabs=0.0, epsrel=1e-12, limit=200, full_output=True,
        )
        integral, abserr = res[0], res[1]
        # a fourth element is QUADPACK's warning message
        if len(res) > 3 or abserr > 1e-11 * abs(integral):
            raise QuadratureError(
                f"local weight quadrature did not converge (estimate {abserr:.3e})"
            )
    num = math.exp(-b * tau) * tau ** (1 - gamma) + b * integral
    return num / (tau * special.gamma(2 - gamma))


# --------------------------------------------------------------------------
# sum-of-exponentials approximation of t^(-gamma)


@dataclass(frozen=True)
class SoeApproximation:
    """``t**-gamma ~ sum_k weights[k] * exp(-nodes[k] * t)`` on ``[delta, horizon]``."""

    gamma: float
    delta: float
    horizon: float
    epsilon: float
    nodes: np.ndarray
    weights: np.ndarray
    max_error: float

    @property
    def n_exp(self) -> int:
        return len(self.nodes)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.nodes)) @ self.weights

    def sampled_error(self, n_samples: int = 10_000) -> float:
        t = np.geomspace(self.delta, self.horizon, n_samples)
        return float(np.max(np.abs(t**-self.gamma - self(t))))


def _soe_candidate(gamma, delta, horizon, n_jacobi, cutoff, n_panels, n_per_panel):
    # t^-g = (1/Gamma(g)) int_0^inf exp(-t s) s^(g-1) ds
    # [0, 1/T]: Gauss-Jacobi with weight s^(g-1); [1/T, cutoff/delta]: Gauss-Legendre in log s
    s_lo = 1.0 / horizon
    xj, wj = special.roots_jacobi(n_jacobi, 0.0, gamma - 1.0)
    s_a = 0.5 * s_lo * (1.0 + xj)
    w_a = wj * (0.5 * s_lo) ** gamma

    edges = np.linspace(math.log(s_lo), math.log(cutoff / delta), n_panels + 1)
    xl, wl = leggauss(n_per_panel)
    lo, hi = edges[:-1, None], edges[1:, None]
    x = (0.5 * (lo + hi) + 0.5 * (hi - lo) * xl).ravel()
    wx = (0.5 * (hi - lo) * wl).ravel()

    nodes = np.concatenate([s_a, np.exp(x)])
    weights = np.concatenate([w_a, wx * np.exp(gamma * x)]) / special.gamma(gamma)
    return nodes, weights


def _max_error(gamma, nodes, weights, t):
    return float(np.max(np.abs(t**-gamma - np.exp(-np.multiply.outer(t, nodes)) @ weights)))


_JACOBI_COUNTS = (3, 4, 5, 6)
_CUTOFFS = (8.0, 12.0, 16.0, 20.0, 24.0, 28.0, 32.0, 40.0, 48.0)
_PANEL_COUNTS = (1, 2)
_MAX_PER_PANEL = 64


@functools.lru_cache(maxsize=64)
def soe_build(
    gamma: float, delta: float, horizon: float, epsilon: float, n_samples: int = 10_000
) -> SoeApproximation:
    """Sum-of-exponentials fit of ``t**-gamma`` certified to ``epsilon`` on ``[delta, horizon]``.

    Candidates come from one fixed family (independent of ``epsilon``); the one
    with fewest terms whose maximum error on ``n_samples`` log-spaced points is
    below ``epsilon`` is returned.

    :raises CertificationError: if no candidate reaches the tolerance.
    """
    gamma = check_open_interval(gamma, 0.0, 1.0, "gamma")
    delta = check_positive(delta, "delta")
    horizon = float(horizon)
    if not horizon > delta:
        raise ValueError(f"horizon must exceed delta, got {horizon} <= {delta}")
    epsilon = check_positive(epsilon, "epsilon")

    t_screen = np.geomspace(delta, horizon, 1000)
    t_cert = np.geomspace(delta, horizon, n_samples)

    def certified(args):
        nodes, weights = _soe_candidate(gamma, delta, horizon, *args)
        if _max_error(gamma, nodes, weights, t_screen) >= epsilon:
            return None
        err = _max_error(gamma, nodes, weights, t_cert)
        return (nodes, weights, err) if err < epsilon else None

    best = None
    best_count = math.inf
    for nj in _JACOBI_COUNTS:
        for cutoff in _CUTOFFS:
            for npanels in _PANEL_COUNTS:
                # smallest per-panel order that certifies, by bisection
                lo, hi = 1, min(_MAX_PER_PANEL, (best_count - nj - 1) // npanels)
                if hi < 2 or certified((nj, cutoff, npanels, hi)) is None:
                    continue
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    if certified((nj, cutoff, npanels, mid)) is None:
                        lo = mid
                    else:
                        hi = mid
                nodes, weights, err = certified((nj, cutoff, npanels, hi))
                best_count = len(nodes)
                best = (nodes, weights, err)

    if best is None:
        raise CertificationError(
            f"no SOE candidate reached epsilon={epsilon:g} on [{delta:g}, {horizon:g}] "
            f"for gamma={gamma}"
        )
    nodes, weights, err = best
    order = np.argsort(nodes)
    nodes, weights = nodes[order], weights[order]
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return SoeApproximation(gamma, delta, horizon, epsilon, nodes, weights, err)
