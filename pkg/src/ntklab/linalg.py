"""Dense symmetric linear algebra: eigensolver and PSD factorisation.

The eigensolver is Householder tridiagonalisation followed by implicit-shift
QL iteration (the EISPACK tql2 recurrence). Each stage has a numba loop
version and a vectorised numpy version; both are deterministic.
"""
from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit

_EPS = 2.0 ** -52


class EigenError(ArithmeticError):
    pass


# --------------------------------------------------------------------------
# tridiagonalisation


def _tridiag_np(M, vectors):
    A = np.array(M, dtype=float, copy=True)
    n = A.shape[0]
    Q = np.eye(n) if vectors else None
    for k in range(n - 2):
        x = A[k + 1:, k]
        alpha = math.sqrt(float(x @ x))
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        vn2 = float(v @ v)
        if vn2 == 0.0:
            continue
        B = A[k + 1:, k + 1:]
        p = (B @ v) * (2.0 / vn2)
        w = p - (float(v @ p) / vn2) * v
        B -= np.outer(v, w) + np.outer(w, v)
        A[k + 1:, k] = 0.0
        A[k, k + 1:] = 0.0
        A[k + 1, k] = A[k, k + 1] = alpha
        if vectors:
            Q[:, k + 1:] -= np.outer(Q[:, k + 1:] @ v, v * (2.0 / vn2))
    d = np.diag(A).copy()
    e = np.zeros(n)
    e[: n - 1] = np.diag(A, -1)
    return d, e, Q


@njit(cache=True)
def _tridiag_nb(M, vectors):
    n = M.shape[0]
    A = M.copy()
    Q = np.eye(n)
    v = np.empty(n)
    p = np.empty(n)
    w = np.empty(n)
    for k in range(n - 2):
        alpha = 0.0
        for i in range(k + 1, n):
            alpha += A[i, k] * A[i, k]
        alpha = math.sqrt(alpha)
        if alpha == 0.0:
            continue
        if A[k + 1, k] > 0:
            alpha = -alpha
        vn2 = 0.0
        for i in range(k + 1, n):
            v[i] = A[i, k]
        v[k + 1] -= alpha
        for i in range(k + 1, n):
            vn2 += v[i] * v[i]
        if vn2 == 0.0:
            continue
        vp = 0.0
        for i in range(k + 1, n):
            acc = 0.0
            for j in range(k + 1, n):
                acc += A[i, j] * v[j]
            p[i] = acc * (2.0 / vn2)
            vp += v[i] * p[i]
        kk = vp / vn2
        for i in range(k + 1, n):
            w[i] = p[i] - kk * v[i]
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i, j] -= v[i] * w[j] + w[i] * v[j]
        for i in range(k + 1, n):
            A[i, k] = 0.0
            A[k, i] = 0.0
        A[k + 1, k] = alpha
        A[k, k + 1] = alpha
        if vectors:
            for r in range(n):
                acc = 0.0
                for j in range(k + 1, n):
                    acc += Q[r, j] * v[j]
                acc *= 2.0 / vn2
                for j in range(k + 1, n):
                    Q[r, j] -= acc * v[j]
    d = np.empty(n)
    e = np.zeros(n)
    for i in range(n):
        d[i] = A[i, i]
    for i in range(n - 1):
        e[i] = A[i + 1, i]
    return d, e, Q


# --------------------------------------------------------------------------
# implicit QL on the tridiagonal (d, e); e[i] couples i and i+1


def _ql_np(d, e, Z, vectors):
    n = d.shape[0]
    f = 0.0
    tst1 = 0.0
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n - 1 and abs(e[m]) > _EPS * tst1:
            m += 1
        if m > l:
            it = 0
            while True:
                it += 1
                if it > 100:
                    raise EigenError("QL iteration did not converge")
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = math.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                d[l + 2:] -= h
                f += h
                p = d[m]
                c = c2 = c3 = 1.0
                el1 = e[l + 1]
                s = s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = math.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    if vectors:
                        zi1 = Z[:, i + 1].copy()
                        Z[:, i + 1] = s * Z[:, i] + c * zi1
                        Z[:, i] = c * Z[:, i] - s * zi1
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= _EPS * tst1:
                    break
        d[l] += f
        e[l] = 0.0
    return d, Z


@njit(cache=True)
def _ql_nb(d, e, Z, vectors):
    n = d.shape[0]
    f = 0.0
    tst1 = 0.0
    eps = 2.0 ** -52
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n - 1 and abs(e[m]) > eps * tst1:
            m += 1
        if m > l:
            it = 0
            while True:
                it += 1
                if it > 100:
                    return d, Z, False
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = math.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                for i in range(l + 2, n):
                    d[i] -= h
                f += h
                p = d[m]
                c = 1.0
                c2 = 1.0
                c3 = 1.0
                el1 = e[l + 1]
                s = 0.0
                s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = math.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    if vectors:
                        for k in range(n):
                            hz = Z[k, i + 1]
                            Z[k, i + 1] = s * Z[k, i] + c * hz
                            Z[k, i] = c * Z[k, i] - s * hz
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= eps * tst1:
                    break
        d[l] += f
        e[l] = 0.0
    return d, Z, True


def eigh(M, vectors: bool = True, backend: str | None = None):
    """Eigenvalues (ascending) and, optionally, orthonormal eigenvectors.

    ``backend`` forces "numba" or "numpy"; default follows ``NTKLAB_BACKEND``.
    """
    M = np.ascontiguousarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("eigh needs a square matrix")
    n = M.shape[0]
    if n == 0:
        return (np.zeros(0), np.zeros((0, 0))) if vectors else np.zeros(0)
    use_nb = (_accel.USE_NUMBA if backend is None else backend == "numba") and _accel.HAVE_NUMBA
    if use_nb:
        d, e, Q = _tridiag_nb(M, vectors)
        d, Z, ok = _ql_nb(d, e, Q, vectors)
        if not ok:
            raise EigenError("QL iteration did not converge")
    else:
        d, e, Q = _tridiag_np(M, vectors)
        d, Z = _ql_np(d, e, Q, vectors)
    order = np.argsort(d, kind="stable")
    if vectors:
        return d[order], Z[:, order]
    return d[order]


def eigvalsh(M, backend: str | None = None) -> np.ndarray:
    return eigh(M, vectors=False, backend=backend)


# --------------------------------------------------------------------------
# pivoted Cholesky


def _pivchol_np(A, tol):
    A = np.array(A, dtype=float, copy=True)
    n = A.shape[0]
    L = np.zeros((n, n))
    perm = np.arange(n)
    for k in range(n):
        j = k + int(np.argmax(np.diag(A)[k:]))
        if A[j, j] <= tol:
            break
        if j != k:
            A[[k, j]] = A[[j, k]]
            A[:, [k, j]] = A[:, [j, k]]
            L[[k, j]] = L[[j, k]]
            perm[[k, j]] = perm[[j, k]]
        piv = math.sqrt(A[k, k])
        L[k, k] = piv
        L[k + 1:, k] = A[k + 1:, k] / piv
        A[k + 1:, k + 1:] -= np.outer(L[k + 1:, k], L[k + 1:, k])
    return L, perm


@njit(cache=True)
def _pivchol_nb(M, tol):
    A = M.copy()
    n = A.shape[0]
    L = np.zeros((n, n))
    perm = np.arange(n)
    for k in range(n):
        j = k
        for i in range(k + 1, n):
            if A[i, i] > A[j, j]:
                j = i
        if A[j, j] <= tol:
            break
        if j != k:
            for c in range(n):
                t = A[k, c]
                A[k, c] = A[j, c]
                A[j, c] = t
            for r in range(n):
                t = A[r, k]
                A[r, k] = A[r, j]
                A[r, j] = t
            for c in range(n):
                t = L[k, c]
                L[k, c] = L[j, c]
                L[j, c] = t
            t2 = perm[k]
            perm[k] = perm[j]
            perm[j] = t2
        piv = math.sqrt(A[k, k])
        L[k, k] = piv
        for i in range(k + 1, n):
            L[i, k] = A[i, k] / piv
        for i in range(k + 1, n):
            for c in range(k + 1, n):
                A[i, c] -= L[i, k] * L[c, k]
    return L, perm


def pivoted_cholesky(M, backend: str | None = None):
    """Lower-triangular L and permutation ``perm`` with M[perm][:, perm] = L L^T.

    Stops when the largest remaining pivot is below n * eps * max(diag), which
    handles rank-deficient PSD input.
    """
    M = np.ascontiguousarray(M, dtype=float)
    n = M.shape[0]
    dmax = float(np.max(np.diag(M))) if n else 0.0
    tol = max(n, 1) * _EPS * max(dmax, 0.0)
    use_nb = (_accel.USE_NUMBA if backend is None else backend == "numba") and _accel.HAVE_NUMBA
    return (_pivchol_nb if use_nb else _pivchol_np)(M, tol)


def psd_factor(M, backend: str | None = None) -> np.ndarray:
    """F with F F^T = M for symmetric PSD M.

    F is lower triangular up to the pivot row permutation (exactly lower
    triangular when no pivoting was needed). Rejects matrices with an
    eigenvalue below -1e-10 * lambda_max.
    """
    from .gauss import NotPSDError

    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("psd_factor needs a square matrix")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)):
        raise ValueError("psd_factor needs a symmetric matrix")
    M = 0.5 * (M + M.T)
    w = eigvalsh(M, backend=backend)
    if w.size and w[0] < -1e-10 * max(w[-1], 0.0):
        raise NotPSDError(f"matrix has eigenvalue {float(w[0])!r} below -1e-10 * lambda_max ({float(w[-1])!r})")
    L, perm = pivoted_cholesky(M, backend=backend)
    F = np.empty_like(L)
    F[perm] = L
    return F
