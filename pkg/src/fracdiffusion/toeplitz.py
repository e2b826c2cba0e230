"""Toeplitz structure of the per-step system matrices.

Each time level of the implicit scheme solves

    M = c0 I - diag(xi) / h**alpha * (p W + (1 - p) W^T)

where ``W`` is the lower-Hessenberg Toeplitz matrix of WSGD weights. This module
holds the O(n) representation of ``M``, FFT-based products, the skew-circulant
and banded preconditioners, and the Gohberg-Semencul inverse used when ``xi`` is
constant.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from ._validation import check_closed, check_vector
from .errors import SingularPreconditionerError
from .kernels import WsgdWeights, alpha0

__all__ = [
    "ToeplitzMatrix",
    "SystemOperator",
    "SkewCirculantFactor",
    "BandedFactor",
    "GsfInverse",
    "toeplitz_matvec",
    "wsgd_toeplitz",
    "apply_system",
    "build_skew_circulant_preconditioner",
    "build_banded_preconditioner",
    "build_gsf_inverse",
    "is_diagonally_dominant",
]


def _embedding_size(n: int) -> int:
    return 1 << max(0, (2 * n - 2).bit_length())


class ToeplitzMatrix:
    """Real Toeplitz matrix ``T[i, j] = t_{i-j}`` stored by first column and row.

    Products use a circulant embedding whose length is the next power of two
    ``>= 2n - 1``; its spectrum is computed once at construction.
    """

    def __init__(self, first_col, first_row=None):
        col = np.array(first_col, dtype=float)
        row = col.copy() if first_row is None else np.array(first_row, dtype=float)
        if col.ndim != 1 or row.shape != col.shape or len(col) == 0:
            raise ValueError("first_col and first_row must be non-empty vectors of equal length")
        if col[0] != row[0]:
            raise ValueError("first_col[0] and first_row[0] must agree")
        self.first_col = col
        self.first_row = row
        self.n = len(col)
        self._m = _embedding_size(self.n)
        circ = np.zeros(self._m)
        circ[: self.n] = col
        if self.n > 1:
            circ[self._m - self.n + 1 :] = row[:0:-1]
        self._spectrum = np.fft.rfft(circ)

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: matrix is {self.n}, vector is {v.shape[0]}")
        vf = np.fft.rfft(v, n=self._m, axis=0)
        spec = self._spectrum if v.ndim == 1 else self._spectrum[:, None]
        return np.fft.irfft(spec * vf, n=self._m, axis=0)[: self.n]

    __matmul__ = matvec

    def transpose(self) -> ToeplitzMatrix:
        return ToeplitzMatrix(self.first_row, self.first_col)

    @property
    def T(self) -> ToeplitzMatrix:
        return self.transpose()

    def to_dense(self) -> np.ndarray:
        i, j = np.indices(self.shape)
        d = i - j
        return np.where(d >= 0, self.first_col[np.abs(d)], self.first_row[np.abs(d)])

    def stored_scalars(self) -> int:
        return self.first_col.size + self.first_row.size + 2 * self._spectrum.size


def toeplitz_matvec(T: ToeplitzMatrix, v) -> np.ndarray:
    """``T @ v`` in O(n log n)."""
    return T.matvec(v)


def wsgd_toeplitz(w: WsgdWeights, n: int, p: float = 1.0) -> ToeplitzMatrix:
    """``p W + (1 - p) W^T`` of order ``n`` with ``W[i, j] = w_{i-j+1}``."""
    if w.count < n:
        raise ValueError(f"need WSGD weights up to index {n}, have {w.count}")
    p = check_closed(p, 0.0, 1.0, "p")
    lower = np.array(w.w[1 : n + 1])  # W first column
    upper = np.zeros(n)  # W first row
    upper[0] = w.w[1]
    if n > 1:
        upper[1] = w.w[0]
    return ToeplitzMatrix(p * lower + (1 - p) * upper, p * upper + (1 - p) * lower)


# --------------------------------------------------------------------------
# per-step operator


@dataclass(frozen=True)
class SystemOperator:
    """``c0 I - diag(diag_xi) / h**alpha * (p W + (1-p) W^T)`` on the interior nodes.

    Build with :meth:`build`; :meth:`with_coefficients` swaps ``c0``/``diag_xi``
    while reusing the Toeplitz part.
    """

    c0: float
    h: float
    alpha: float
    p: float
    diag_xi: np.ndarray
    w: WsgdWeights
    time_independent: bool
    structure: ToeplitzMatrix = field(repr=False, compare=False)

    @classmethod
    def build(cls, c0, h, alpha, p, diag_xi, w: WsgdWeights, time_independent=False):
        diag_xi = np.asarray(diag_xi, dtype=float)
        if diag_xi.ndim == 0:
            raise ValueError("diag_xi must be a vector")
        if np.any(diag_xi <= 0):
            raise ValueError("diffusion coefficient must be positive on the grid")
        if not math.isclose(w.alpha, alpha):
            raise ValueError("WSGD weights were built for a different alpha")
        structure = wsgd_toeplitz(w, len(diag_xi), p)
        return cls(float(c0), float(h), float(alpha), float(p), diag_xi, w,
                   bool(time_independent), structure)

    def with_coefficients(self, c0=None, diag_xi=None, time_independent=None):
        changes = {}
        if c0 is not None:
            changes["c0"] = float(c0)
        if diag_xi is not None:
            diag_xi = np.asarray(diag_xi, dtype=float)
            check_vector(diag_xi, self.n, "diag_xi")
            if np.any(diag_xi <= 0):
                raise ValueError("diffusion coefficient must be positive on the grid")
            changes["diag_xi"] = diag_xi
        if time_independent is not None:
            changes["time_independent"] = bool(time_independent)
        return dataclasses.replace(self, **changes)

    @property
    def n(self) -> int:
        return len(self.diag_xi)

    @property
    def scale(self) -> float:
        return self.h ** -self.alpha

    def norm_bound(self) -> float:
        """Upper bound on the 1- and infinity-norms of the operator."""
        wsum = np.sum(np.abs(self.w.w[: self.n + 1]))
        return abs(self.c0) + self.scale * float(np.max(self.diag_xi)) * wsum

    @property
    def xi_is_constant(self) -> bool:
        xi = self.diag_xi
        return bool(np.ptp(xi) <= 1e-14 * np.max(np.abs(xi)))

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: operator is {self.n}, vector is {v.shape[0]}")
        xi = self.diag_xi if v.ndim == 1 else self.diag_xi[:, None]
        return self.c0 * v - (self.scale * xi) * self.structure.matvec(v)

    __call__ = apply

    def to_dense(self) -> np.ndarray:
        dense = -(self.scale * self.diag_xi)[:, None] * self.structure.to_dense()
        dense[np.diag_indices(self.n)] += self.c0
        return dense


def apply_system(op: SystemOperator, v) -> np.ndarray:
    return op.apply(v)


# --------------------------------------------------------------------------
# skew-circulant preconditioner


@dataclass(frozen=True)
class SkewCirculantFactor:
    """Skew-circulant matrix ``Omega^* F^* diag(spectrum) F Omega``.

    ``omega`` holds the modulation ``exp(i pi k / n)``.
    """

    spectrum: np.ndarray
    omega: np.ndarray

    @property
    def n(self) -> int:
        return len(self.omega)

    def apply(self, v) -> np.ndarray:
        return self._transform(v, self.spectrum)

    def solve(self, v) -> np.ndarray:
        return self._transform(v, 1.0 / self.spectrum)

    __call__ = solve

    def _transform(self, v, diag):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factor is {self.n}, vector is {v.shape[0]}")
        out = np.conj(self.omega) * np.fft.ifft(diag * np.fft.fft(self.omega * v))
        return out.real

    def to_dense(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.n)])

    def stored_scalars(self) -> int:
        return 2 * (self.spectrum.size + self.omega.size)


def _skew_modulation(n):
    return np.exp(1j * np.pi * np.arange(n) / n)


def skew_circulant_column(w: WsgdWeights, n: int) -> np.ndarray:
    """First column ``[w_1, ..., w_{n-1}, -w_0]`` of the skew-circulant part of ``W``."""
    col = np.array(w.w[1 : n + 1])
    col[n - 1] = -w.w[0]
    return col


def build_skew_circulant_preconditioner(op: SystemOperator) -> SkewCirculantFactor:
    """Skew-circulant approximation of ``op`` with ``xi`` replaced by its grid mean."""
    n = op.n
    if n < 2:
        raise ValueError("skew-circulant preconditioner needs at least 2 unknowns")
    omega = _skew_modulation(n)
    lam = np.fft.fft(omega * skew_circulant_column(op.w, n))
    xi_bar = float(np.mean(op.diag_xi))
    spectrum = op.c0 - xi_bar * op.scale * (op.p * lam + (1 - op.p) * np.conj(lam))
    mag = np.abs(spectrum)
    bad = np.flatnonzero(mag < 1e-14 * mag.max())
    if bad.size:
        raise SingularPreconditionerError(
            f"skew-circulant preconditioner is singular at mode {bad[0]}", index=int(bad[0])
        )
    spectrum.flags.writeable = False
    return SkewCirculantFactor(spectrum, omega)


# --------------------------------------------------------------------------
# banded preconditioner


@dataclass(frozen=True)
class BandedFactor:
    """LU factors (partial pivoting) of ``op`` truncated to ``|i - j| <= bandwidth``."""

    bandwidth: int
    lu: np.ndarray = field(repr=False)
    piv: np.ndarray = field(repr=False)
    n: int = 0

    def solve(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factor is {self.n}, vector is {v.shape[0]}")
        x, info = lapack.dgbtrs(self.lu, self.bandwidth, self.bandwidth, v, self.piv)
        if info != 0:
            raise ValueError(f"dgbtrs failed with info={info}")
        return x

    __call__ = solve

    def stored_scalars(self) -> int:
        return self.lu.size + self.piv.size


def banded_truncation(op: SystemOperator, bandwidth: int) -> np.ndarray:
    """Dense form of the banded matrix factored by :func:`build_banded_preconditioner`."""
    dense = op.to_dense()
    i, j = np.indices(dense.shape)
    dense[np.abs(i - j) > bandwidth] = 0.0
    return dense


def build_banded_preconditioner(op: SystemOperator, bandwidth: int = 8) -> BandedFactor:
    """Banded LU of ``op`` keeping diagonals ``|i - j| <= bandwidth``.

    The full diagonal ``diag_xi`` is kept (no averaging).
    """
    n = op.n
    kl = ku = int(bandwidth)
    if not 1 <= kl <= max(1, n - 1):
        raise ValueError(f"bandwidth must lie in [1, {n - 1}], got {bandwidth}")
    # LAPACK band storage with kl extra rows for fill-in: ab[kl + ku + i - j, j] = A[i, j]
    ab = np.zeros((2 * kl + ku + 1, n))
    col, row = op.structure.first_col, op.structure.first_row
    xi_s = op.scale * op.diag_xi
    for d in range(-ku, kl + 1):  # d = i - j
        j = np.arange(max(0, -d), min(n, n - d))
        i = j + d
        t = col[d] if d >= 0 else row[-d]
        vals = -xi_s[i] * t
        if d == 0:
            vals = vals + op.c0
        ab[kl + ku + d, j] = vals
    lu, piv, info = lapack.dgbtrf(ab, kl, ku)
    if info > 0:
        raise SingularPreconditionerError(
            f"banded LU hit a zero pivot at row {info - 1}", index=int(info - 1)
        )
    if info < 0:
        raise ValueError(f"dgbtrf rejected argument {-info}")
    return BandedFactor(kl, lu, piv, n)


# --------------------------------------------------------------------------
# Gohberg-Semencul inverse


class GsfInverse:
    """Inverse of a Toeplitz matrix from its first and last inverse columns.

    With ``x = M^{-1} e_1`` and ``y = M^{-1} e_n``::

        M^{-1} = (L(x) L(J y)^T - L(Z y) L(Z J x)^T) / x_0

    where ``L(v)`` is lower-triangular Toeplitz with first column ``v``, ``J``
    reverses and ``Z`` shifts down. One application costs six FFTs.
    """

    def __init__(self, first_col, last_col):
        x = np.asarray(first_col, dtype=float)
        y = np.asarray(last_col, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("first and last columns must be vectors of equal length")
        scale = max(np.max(np.abs(x)), np.max(np.abs(y)))
        if abs(x[0]) <= 1e-14 * scale:
            raise SingularPreconditionerError(
                "Gohberg-Semencul leading entry is (near) zero", index=0
            )
        self.first_col = x
        self.last_col = y
        self.n = n = len(x)
        self._m = m = _embedding_size(n)

        def lower_spec(v):
            c = np.zeros(m)
            c[:n] = v
            return np.fft.rfft(c)

        def upper_spec(v):  # upper-triangular Toeplitz with first row v
            c = np.zeros(m)
            c[0] = v[0]
            if n > 1:
                c[m - n + 1 :] = v[:0:-1]
            return np.fft.rfft(c)

        zy = np.concatenate([[0.0], y[:-1]])
        zjx = np.concatenate([[0.0], x[::-1][:-1]])
        self._l1 = lower_spec(x)
        self._u1 = upper_spec(y[::-1])
        self._l2 = lower_spec(zy)
        self._u2 = upper_spec(zjx)
        self._x0 = x[0]

    def apply(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: inverse is {self.n}, vector is {b.shape[0]}")
        n, m = self.n, self._m
        bf = np.fft.rfft(b, n=m)
        v1 = np.fft.irfft(self._u1 * bf, n=m)[:n]
        v2 = np.fft.irfft(self._u2 * bf, n=m)[:n]
        combined = self._l1 * np.fft.rfft(v1, n=m) - self._l2 * np.fft.rfft(v2, n=m)
        return np.fft.irfft(combined, n=m)[:n] / self._x0

    __call__ = apply

    def stored_scalars(self) -> int:
        return 2 * self.n + 2 * (self._l1.size + self._u1.size + self._l2.size + self._u2.size)


def build_gsf_inverse(op: SystemOperator, rtol: float = 1e-14) -> GsfInverse:
    """Gohberg-Semencul inverse of a time-independent, constant-``xi`` operator.

    The two inverse columns come from skew-circulant preconditioned BiCGSTAB
    solves followed by one step of iterative refinement.
    """
    from .krylov import SolveConfig, bicgstab

    if not op.time_independent:
        raise ValueError("GSF inverse requires a time-independent operator")
    if not op.xi_is_constant:
        raise ValueError("GSF inverse requires a spatially constant diffusion coefficient")

    n = op.n
    pre = build_skew_circulant_preconditioner(op)
    cfg = SolveConfig(rtol=rtol, max_iter=max(200, 4 * n))
    cols = []
    for k in (0, n - 1):
        e = np.zeros(n)
        e[k] = 1.0
        res = bicgstab(op.apply, pre.solve, e, cfg=cfg)
        x = res.x
        r = e - op.apply(x)
        corr = bicgstab(op.apply, pre.solve, r, cfg=SolveConfig(rtol=1e-6, max_iter=cfg.max_iter))
        cols.append(x + corr.x)
    return GsfInverse(cols[0], cols[1])


# --------------------------------------------------------------------------


def is_diagonally_dominant(op: SystemOperator, dense_limit: int = 64) -> bool:
    """Row diagonal dominance of ``op``.

    Checked on the dense matrix for ``n <= dense_limit``; otherwise the
    sufficient condition ``alpha >= alpha0`` (with positive ``xi``) is used.
    """
    if op.n <= dense_limit:
        a = op.to_dense()
        diag = np.abs(np.diag(a))
        off = np.sum(np.abs(a), axis=1) - diag
        return bool(np.all(diag >= off * (1 - 1e-13)))
    return op.alpha >= alpha0() and bool(np.all(op.diag_xi > 0))
