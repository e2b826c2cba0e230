"""Preconditioned BiCGSTAB with iteration accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = ["PRECONDITIONERS", "SolveConfig", "SolveResult", "bicgstab"]

PRECONDITIONERS = ("none", "banded", "skew_circulant", "exact_gsf")

_BREAKDOWN = 1e-30


@dataclass(frozen=True)
class SolveConfig:
    """Linear solver settings for one run.

    ``use_gsf`` lets the time stepper switch to the Gohberg-Semencul inverse
    when the system matrix is constant; ``direct`` forces a dense LU solve.
    """

    rtol: float = 1e-12
    max_iter: int = 1000
    preconditioner: str = "skew_circulant"
    bandwidth: int = 8
    use_gsf: bool = True
    direct: bool = False

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError(f"rtol must be positive, got {self.rtol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(
                f"unknown preconditioner {self.preconditioner!r}; expected one of {PRECONDITIONERS}"
            )
        if self.bandwidth < 1:
            raise ValueError(f"bandwidth must be >= 1, got {self.bandwidth}")


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: float
    converged: bool
    final_relative_residual: float
    breakdown: Optional[str] = None
    recurred_relative_residual: float = float("nan")


def _identity(v):
    return v


def bicgstab(
    apply_A: Callable[[np.ndarray], np.ndarray],
    apply_Pinv: Optional[Callable[[np.ndarray], np.ndarray]],
    b,
    x0=None,
    cfg: SolveConfig = SolveConfig(),
) -> SolveResult:
    """Solve ``A x = b`` by right-preconditioned BiCGSTAB.

    Converged means ``||b - A x|| <= rtol * ||b - A x0||`` for the explicitly
    recomputed residual. A full step counts 1, an exit after the first half
    step counts 0.5. When the recurred residual reaches the tolerance but the
    true residual does not, the iteration restarts from the current iterate.
    Breakdown (``rho`` or ``omega`` vanishing) returns the current iterate with
    ``breakdown`` set to ``"rho"`` or ``"omega"``.
    """
    b = np.asarray(b, dtype=float)
    Pinv = apply_Pinv or _identity
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)

    r = b - apply_A(x) if x0 is not None else b.copy()
    r0_norm = np.linalg.norm(r)
    if r0_norm == 0.0:
        return SolveResult(x, 0.0, True, 0.0, None, 0.0)
    target = cfg.rtol * r0_norm

    iters = 0.0
    restarts = 0
    best_true = np.inf
    recurred = 1.0
    while True:
        r_hat = r.copy()
        rho_scale = np.dot(r_hat, r_hat)
        rho = alpha = omega = 1.0
        v = np.zeros_like(b)
        p = np.zeros_like(b)
        status = None  # "half" | "full" | "rho" | "omega" | "maxiter"
        while True:
            if iters >= cfg.max_iter:
                status = "maxiter"
                break
            rho_new = np.dot(r_hat, r)
            if abs(rho_new) < _BREAKDOWN * rho_scale:
                status = "rho"
                break
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            p_hat = Pinv(p)
            v = apply_A(p_hat)
            denom = np.dot(r_hat, v)
            if abs(denom) < _BREAKDOWN * rho_scale:
                status = "rho"
                break
            alpha = rho / denom
            s = r - alpha * v
            x = x + alpha * p_hat
            if np.linalg.norm(s) <= target:
                iters += 0.5
                r = s
                status = "half"
                break
            s_hat = Pinv(s)
            t = apply_A(s_hat)
            tt = np.dot(t, t)
            if tt == 0.0:
                iters += 0.5
                r = s
                status = "omega"
                break
            omega = np.dot(t, s) / tt
            x = x + omega * s_hat
            r = s - omega * t
            iters += 1.0
            if np.linalg.norm(r) <= target:
                status = "full"
                break
            if abs(omega) < _BREAKDOWN:
                status = "omega"
                break

        recurred = np.linalg.norm(r) / r0_norm
        true_r = b - apply_A(x)
        true_norm = np.linalg.norm(true_r)
        if true_norm <= target:
            return SolveResult(x, iters, True, true_norm / r0_norm, None, recurred)
        if status in ("half", "full") and restarts < 5 and true_norm < best_true:
            # recurred residual drifted from the true one; restart from x
            best_true = true_norm
            restarts += 1
            r = true_r
            continue
        breakdown = status if status in ("rho", "omega") else None
        return SolveResult(x, iters, False, true_norm / r0_norm, breakdown, recurred)
