"""Compiled inner loops for incomplete and banded factorizations.

Functions return a status code instead of raising (numba nopython mode):
``-1`` means success, otherwise the offending row index.
"""
import numpy as np
from numba import njit

OK = -1


@njit(cache=True)
def ilu0_factor(row_ptr, col_idx, values, diag_ptr):
    """In-place IKJ ILU(0) on a CSR matrix with sorted columns.

    On return the strict lower part holds L (unit diagonal implied) and the
    upper part, including the diagonal, holds U.
    """
    n = row_ptr.size - 1
    lu = values.copy()
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        start, end = row_ptr[i], row_ptr[i + 1]
        for p in range(start, end):
            pos[col_idx[p]] = p
        for p in range(start, end):
            k = col_idx[p]
            if k >= i:
                break
            pivot = lu[diag_ptr[k]]
            if pivot == 0.0:
                for q in range(start, end):
                    pos[col_idx[q]] = -1
                return lu, k
            lik = lu[p] / pivot
            lu[p] = lik
            for q in range(diag_ptr[k] + 1, row_ptr[k + 1]):
                slot = pos[col_idx[q]]
                if slot >= 0:
                    lu[slot] -= lik * lu[q]
        for p in range(start, end):
            pos[col_idx[p]] = -1
        if lu[diag_ptr[i]] == 0.0:
            return lu, i
    return lu, OK


@njit(cache=True)
def ilu0_solve(row_ptr, col_idx, lu, diag_ptr, r):
    n = row_ptr.size - 1
    y = np.empty(n)
    for i in range(n):
        s = r[i]
        for p in range(row_ptr[i], diag_ptr[i]):
            s -= lu[p] * y[col_idx[p]]
        y[i] = s
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for p in range(diag_ptr[i] + 1, row_ptr[i + 1]):
            s -= lu[p] * x[col_idx[p]]
        x[i] = s / lu[diag_ptr[i]]
    return x


@njit(cache=True)
def band_cholesky(ab, b):
    """Cholesky of a symmetric band stored as ``ab[i, b + j - i] = A[i, j]`` for ``i-b <= j <= i``."""
    n = ab.shape[0]
    L = ab.copy()
    for j in range(n):
        s = L[j, b]
        for k in range(max(0, j - b), j):
            v = L[j, b + k - j]
            s -= v * v
        if s <= 0.0:
            return L, j
        d = np.sqrt(s)
        L[j, b] = d
        for i in range(j + 1, min(n, j + b + 1)):
            s = L[i, b + j - i]
            for k in range(max(0, i - b), j):
                s -= L[i, b + k - i] * L[j, b + k - j]
            L[i, b + j - i] = s / d
    return L, OK


@njit(cache=True)
def band_cholesky_solve(L, b, rhs):
    n = L.shape[0]
    y = rhs.copy()
    for i in range(n):
        s = y[i]
        for k in range(max(0, i - b), i):
            s -= L[i, b + k - i] * y[k]
        y[i] = s / L[i, b]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, min(n, i + b + 1)):
            s -= L[k, b + i - k] * y[k]
        y[i] = s / L[i, b]
    return y


@njit(cache=True)
def band_lu(ab, b):
    """LU without pivoting of a band stored as ``ab[i, b + j - i] = A[i, j]`` for ``|i-j| <= b``."""
    n = ab.shape[0]
    F = ab.copy()
    for k in range(n):
        piv = F[k, b]
        if piv == 0.0:
            return F, k
        for i in range(k + 1, min(n, k + b + 1)):
            lik = F[i, b + k - i] / piv
            F[i, b + k - i] = lik
            if lik != 0.0:
                for j in range(k + 1, min(n, k + b + 1)):
                    F[i, b + j - i] -= lik * F[k, b + j - k]
    return F, OK


@njit(cache=True)
def band_lu_solve(F, b, rhs):
    n = F.shape[0]
    y = rhs.copy()
    for i in range(n):
        s = y[i]
        for k in range(max(0, i - b), i):
            s -= F[i, b + k - i] * y[k]
        y[i] = s
    for i in range(n - 1, -1, -1):
        s = y[i]
        for j in range(i + 1, min(n, i + b + 1)):
            s -= F[i, b + j - i] * y[j]
        y[i] = s / F[i, b]
    return y
