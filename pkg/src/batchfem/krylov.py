"""Sparse linear solvers: CSR products, Krylov methods, preconditioners, banded direct factorizations.

All iterative methods test convergence on the true, unpreconditioned relative
residual ``||b - A x|| / ||b||`` (absolute ``||b - A x||`` when ``b = 0``) and
re-verify it with a fresh product before declaring success.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .assembly import CsrMatrix

__all__ = [
    "Method",
    "PC",
    "SolverConfig",
    "SolveReport",
    "PreconditionerSetupError",
    "FactorizationError",
    "spmv",
    "cg",
    "gmres",
    "bicgstab",
    "IdentityPreconditioner",
    "JacobiPreconditioner",
    "ILU0Preconditioner",
    "jacobi_setup",
    "ilu0_setup",
    "make_preconditioner",
    "BandedFactorization",
    "direct_factor",
    "solve",
]


class Method(str, enum.Enum):
    CG = "cg"
    GMRES = "gmres"
    BICGSTAB = "bicgstab"
    DIRECT_CHOL = "direct_chol"
    DIRECT_LU = "direct_lu"

    @property
    def is_direct(self):
        return self in (Method.DIRECT_CHOL, Method.DIRECT_LU)


class PC(str, enum.Enum):
    NONE = "none"
    JACOBI = "jacobi"
    ILU0 = "ilu0"


class PreconditionerSetupError(ValueError):
    pass


class FactorizationError(ArithmeticError):
    def __init__(self, message, row):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class SolverConfig:
    method: Method = Method.CG
    preconditioner: PC = PC.JACOBI
    rtol: float = 1e-13
    max_iter: int = 10_000
    gmres_restart: int = 30
    gmres_side: str = "left"

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "preconditioner", PC(self.preconditioner))
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.max_iter < 1 or self.gmres_restart < 1:
            raise ValueError("max_iter and gmres_restart must be >= 1")
        if self.gmres_side not in ("left", "right"):
            raise ValueError("gmres_side must be 'left' or 'right'")


@dataclass
class SolveReport:
    """Outcome of one linear solve.

    ``residual_history[0]`` is the relative residual of the initial guess.
    For GMRES, ``restarts`` lists the history index where each cycle starts;
    entries inside a cycle are the least-squares estimates, the cycle-start
    entries and the last entry are true residuals.
    """

    converged: bool
    iterations: int
    residual_history: np.ndarray
    wall_time: float
    status: str = "converged"
    restarts: list = field(default_factory=list)

    @property
    def final_residual(self):
        return float(self.residual_history[-1])


def spmv(A, x):
    """``y = A @ x`` for a :class:`CsrMatrix`, accumulating each row in column order."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.shape[1],):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return np.bincount(A.row_of, weights=A.values * x[A.col_idx], minlength=A.shape[0])


def _matvec(A):
    if isinstance(A, CsrMatrix):
        return lambda x: spmv(A, x)
    if hasattr(A, "matvec"):
        return A.matvec
    A = np.asarray(A)
    return lambda x: A @ x


# ---------------------------------------------------------------------------
# preconditioners


class IdentityPreconditioner:
    def apply(self, r):
        return np.array(r, dtype=np.float64)


class JacobiPreconditioner:
    def __init__(self, diagonal):
        d = np.asarray(diagonal, dtype=np.float64)
        zero = np.flatnonzero(d == 0.0)
        if zero.size:
            raise PreconditionerSetupError(f"zero diagonal entry in row {zero[0]}")
        self.inv_diag = 1.0 / d

    def apply(self, r):
        return self.inv_diag * r


class ILU0Preconditioner:
    """Zero-fill incomplete LU on the pattern of a CSR matrix."""

    def __init__(self, A):
        if not isinstance(A, CsrMatrix):
            raise PreconditionerSetupError("ILU(0) needs an explicitly assembled CSR matrix")
        n = A.shape[0]
        self.row_ptr = np.ascontiguousarray(A.row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(A.col_idx, dtype=np.int64)
        diag = A.row_of == A.col_idx
        has_diag = np.zeros(n, dtype=bool)
        has_diag[A.row_of[diag]] = True
        if not has_diag.all():
            raise PreconditionerSetupError(
                f"row {np.flatnonzero(~has_diag)[0]} has no structural diagonal"
            )
        self.diag_ptr = np.flatnonzero(diag).astype(np.int64)
        lu, status = _kernels.ilu0_factor(
            self.row_ptr, self.col_idx, np.ascontiguousarray(A.values, dtype=np.float64), self.diag_ptr
        )
        if status != _kernels.OK:
            raise PreconditionerSetupError(f"zero pivot in ILU(0) at row {status}")
        self.lu = lu
        self.shape = A.shape

    def factors(self):
        """Dense ``(L, U)`` for inspection on small problems."""
        n = self.shape[0]
        rows = np.repeat(np.arange(n), np.diff(self.row_ptr))
        L, U = np.eye(n), np.zeros((n, n))
        lower = self.col_idx < rows
        L[rows[lower], self.col_idx[lower]] = self.lu[lower]
        U[rows[~lower], self.col_idx[~lower]] = self.lu[~lower]
        return L, U

    def apply(self, r):
        return _kernels.ilu0_solve(
            self.row_ptr, self.col_idx, self.lu, self.diag_ptr, np.asarray(r, dtype=np.float64)
        )


def jacobi_setup(A):
    return JacobiPreconditioner(A.diagonal())


def ilu0_setup(A):
    return ILU0Preconditioner(A)


def make_preconditioner(kind, A):
    kind = PC(kind)
    if kind is PC.NONE:
        return IdentityPreconditioner()
    if kind is PC.JACOBI:
        return jacobi_setup(A)
    return ilu0_setup(A)


# ---------------------------------------------------------------------------
# Krylov methods


def _start(A, b, x0):
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    matvec = _matvec(A)
    bnorm = np.linalg.norm(b)
    denom = bnorm if bnorm > 0 else 1.0
    r = b - matvec(x)
    return b, x, matvec, denom, r


def cg(A, b, config=None, x0=None, M=None):
    """Preconditioned conjugate gradients for SPD ``A``."""
    config = config or SolverConfig(Method.CG)
    M = M or IdentityPreconditioner()
    t0 = time.perf_counter()
    b, x, matvec, denom, r = _start(A, b, x0)
    hist = [np.linalg.norm(r) / denom]
    status, it = "max_iter", 0
    if hist[0] <= config.rtol:
        return x, SolveReport(True, 0, np.array(hist), time.perf_counter() - t0)

    z = M.apply(r)
    p = z.copy()
    rz = r @ z
    while it < config.max_iter:
        Ap = matvec(p)
        pAp = p @ Ap
        if not pAp > 0.0:
            status = "indefinite"
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        hist.append(np.linalg.norm(r) / denom)
        if hist[-1] <= config.rtol:
            r = b - matvec(x)
            hist[-1] = np.linalg.norm(r) / denom
            if hist[-1] <= config.rtol:
                status = "converged"
                break
            # recurrence drifted from the true residual: restart directions
            z = M.apply(r)
            p = z.copy()
            rz = r @ z
            continue
        z = M.apply(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new

    if status != "converged":
        hist.append(np.linalg.norm(b - matvec(x)) / denom)
    return x, SolveReport(status == "converged", it, np.array(hist), time.perf_counter() - t0, status)


def gmres(A, b, config=None, x0=None, M=None):
    """Restarted GMRES(m) with modified Gram-Schmidt Arnoldi and Givens rotations.

    ``config.gmres_side`` selects left (default) or right preconditioning.
    With left preconditioning the in-cycle estimates are preconditioned
    residual norms rescaled by ``||r|| / ||M r||`` of the cycle start; with
    right preconditioning they track the true residual. Either way a cycle
    ends on a fresh ``b - A x``, which alone decides convergence.
    """
    config = config or SolverConfig(Method.GMRES)
    M = M or IdentityPreconditioner()
    m = config.gmres_restart
    left = config.gmres_side == "left"
    t0 = time.perf_counter()
    b, x, matvec, denom, r = _start(A, b, x0)
    n = b.size
    hist = [np.linalg.norm(r) / denom]
    restarts = [0]
    it, status = 0, "max_iter"
    if hist[0] <= config.rtol:
        return x, SolveReport(True, 0, np.array(hist), time.perf_counter() - t0, restarts=restarts)

    tol_scale = 1.0
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    cs, sn = np.zeros(m), np.zeros(m)
    while it < config.max_iter:
        z = M.apply(r) if left else r
        beta = np.linalg.norm(z)
        if beta == 0.0:
            status = "breakdown"
            break
        to_true = np.linalg.norm(r) / beta
        V[0] = z / beta
        g = np.zeros(m + 1)
        g[0] = beta
        H[:] = 0.0
        k = 0
        for j in range(m):
            w = M.apply(matvec(V[j])) if left else matvec(M.apply(V[j]))
            wnorm0 = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                hij = H[i, j]
                H[i, j] = cs[i] * hij + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * hij + cs[i] * H[i + 1, j]
            denom_rot = np.hypot(H[j, j], H[j + 1, j])
            happy = H[j + 1, j] <= 1e-14 * max(wnorm0, 1e-300)
            if denom_rot == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom_rot, H[j + 1, j] / denom_rot
            h_next = H[j + 1, j]
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            it += 1
            k = j + 1
            hist.append(abs(g[j + 1]) * to_true / denom)
            if happy or hist[-1] <= config.rtol * tol_scale or it >= config.max_iter:
                break
            V[j + 1] = w / h_next

        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            if H[i, i] == 0.0:
                y[i] = 0.0
                continue
            y[i] = (g[i] - H[i, i + 1 : k] @ y[i + 1 : k]) / H[i, i]
        x += V[:k].T @ y if left else M.apply(V[:k].T @ y)
        r = b - matvec(x)
        restarts.append(len(hist))
        hist.append(np.linalg.norm(r) / denom)
        if hist[-1] <= config.rtol:
            status = "converged"
            break
        if hist[-2] <= config.rtol * tol_scale:
            # the estimate claimed convergence but the true residual disagrees
            tol_scale = max(tol_scale * 0.1, 1e-6)
    restarts.pop()  # the last entry closes the final cycle, it does not open one
    return x, SolveReport(
        status == "converged", it, np.array(hist), time.perf_counter() - t0, status, restarts
    )


def bicgstab(A, b, config=None, x0=None, M=None):
    """Preconditioned BiCGStab (the residual recurrences stay unpreconditioned)."""
    config = config or SolverConfig(Method.BICGSTAB)
    M = M or IdentityPreconditioner()
    t0 = time.perf_counter()
    b, x, matvec, denom, r = _start(A, b, x0)
    hist = [np.linalg.norm(r) / denom]
    it, status = 0, "max_iter"
    if hist[0] <= config.rtol:
        return x, SolveReport(True, 0, np.array(hist), time.perf_counter() - t0)

    eps2 = np.finfo(float).eps ** 2
    r_hat = r.copy()
    fresh = True
    rho_old = alpha = omega = 1.0
    p = v = None
    while it < config.max_iter:
        rho = r_hat @ r
        if abs(rho) <= eps2 * np.linalg.norm(r_hat) * np.linalg.norm(r):
            status = "breakdown"
            break
        if fresh:
            p = r.copy()
            fresh = False
        else:
            p = r + (rho / rho_old) * (alpha / omega) * (p - omega * v)
        p_hat = M.apply(p)
        v = matvec(p_hat)
        rv = r_hat @ v
        if rv == 0.0:
            status = "breakdown"
            break
        alpha = rho / rv
        s = r - alpha * v
        it += 1
        if np.linalg.norm(s) / denom <= config.rtol:
            x += alpha * p_hat
            r = b - matvec(x)
            hist.append(np.linalg.norm(r) / denom)
            if hist[-1] <= config.rtol:
                status = "converged"
                break
            r_hat, fresh = r.copy(), True
            continue
        s_hat = M.apply(s)
        t = matvec(s_hat)
        tt = t @ t
        if tt == 0.0:
            status = "breakdown"
            break
        omega = (t @ s) / tt
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        hist.append(np.linalg.norm(r) / denom)
        if hist[-1] <= config.rtol:
            r = b - matvec(x)
            hist[-1] = np.linalg.norm(r) / denom
            if hist[-1] <= config.rtol:
                status = "converged"
                break
            r_hat, fresh = r.copy(), True
            continue
        if omega == 0.0:
            status = "breakdown"
            break
        rho_old = rho

    if status != "converged":
        hist.append(np.linalg.norm(b - matvec(x)) / denom)
    return x, SolveReport(status == "converged", it, np.array(hist), time.perf_counter() - t0, status)


# ---------------------------------------------------------------------------
# banded direct solvers


class BandedFactorization:
    """Cholesky or LU (no pivoting) factors in band storage, bandwidth from the CSR profile."""

    def __init__(self, A, kind="chol"):
        if not isinstance(A, CsrMatrix):
            raise TypeError("direct factorization needs an explicitly assembled CSR matrix")
        kind = kind.lower()
        if kind not in ("chol", "lu"):
            raise ValueError(f"unknown factorization kind {kind!r}")
        n = A.shape[0]
        bw = A.bandwidth()
        rows, cols = A.row_of, A.col_idx
        self.kind, self.bandwidth, self.n = kind, bw, n
        if kind == "chol":
            lower = cols <= rows
            ab = np.zeros((n, bw + 1))
            ab[rows[lower], bw + cols[lower] - rows[lower]] = A.values[lower]
            self.factor, status = _kernels.band_cholesky(ab, bw)
            if status != _kernels.OK:
                raise FactorizationError(f"matrix is not positive definite (pivot at row {status})", status)
        else:
            ab = np.zeros((n, 2 * bw + 1))
            ab[rows, bw + cols - rows] = A.values
            self.factor, status = _kernels.band_lu(ab, bw)
            if status != _kernels.OK:
                raise FactorizationError(f"zero pivot in LU at row {status}", status)

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self.n,):
            raise ValueError("right-hand side has the wrong length")
        if self.kind == "chol":
            return _kernels.band_cholesky_solve(self.factor, self.bandwidth, b)
        return _kernels.band_lu_solve(self.factor, self.bandwidth, b)


def direct_factor(A, kind="chol"):
    return BandedFactorization(A, kind)


def solve(A, b, config, x0=None, M=None):
    """Dispatch on ``config.method``; builds the configured preconditioner unless ``M`` is given."""
    if config.method.is_direct:
        return _direct_solve(A, b, config)
    if M is None:
        M = make_preconditioner(config.preconditioner, A)
    fn = {Method.CG: cg, Method.GMRES: gmres, Method.BICGSTAB: bicgstab}[config.method]
    return fn(A, b, config, x0, M)


def _direct_solve(A, b, config):
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    denom = bnorm if bnorm > 0 else 1.0
    kind = "chol" if config.method is Method.DIRECT_CHOL else "lu"
    try:
        x = direct_factor(A, kind).solve(b)
    except FactorizationError as exc:
        hist = np.array([bnorm / denom, np.inf])
        return np.full_like(b, np.nan), SolveReport(
            False, 0, hist, time.perf_counter() - t0, f"factorization_failed: {exc}"
        )
    rres = np.linalg.norm(b - spmv(A, x)) / denom
    ok = bool(rres <= config.rtol)
    hist = np.array([bnorm / denom, rres])
    return x, SolveReport(ok, 1, hist, time.perf_counter() - t0, "converged" if ok else "inaccurate")
