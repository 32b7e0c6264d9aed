"""Dense matrix primitives: Householder QR, least squares, eigenvalues, rank
and central finite-difference Jacobians.

Matrices are plain 2-D ``numpy`` float arrays. All functions are pure.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .exceptions import NonConvergence, NonFiniteEvaluation, RankDeficient

RANK_DEFICIENCY_TOL = 1e-12


class QrFactors(NamedTuple):
    q: np.ndarray
    r: np.ndarray


def _as_matrix(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains NaN or Inf")
    return a


def _householder_reduce(a: np.ndarray):
    """In-place Householder triangularization.

    Returns the reflector vectors (unit norm, zero-padded) and the upper
    triangle. Signs are chosen so the diagonal of R comes out non-negative
    after the final flip performed by callers.
    """
    m, n = a.shape
    vs = []
    for k in range(n):
        x = a[k:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            vs.append(None)
            continue
        v = x.copy()
        v[0] += math.copysign(alpha, x[0]) if x[0] != 0 else alpha
        v /= np.linalg.norm(v)
        a[k:, k:] -= 2.0 * np.outer(v, v @ a[k:, k:])
        vs.append(v)
    return vs, np.triu(a[:n, :])


def _check_rank(r: np.ndarray, scale: float) -> None:
    diag = np.abs(np.diag(r))
    bad = np.flatnonzero(diag < RANK_DEFICIENCY_TOL * scale)
    if bad.size:
        raise RankDeficient(
            f"column {int(bad[0])} is numerically dependent "
            f"(|r_kk| = {diag[bad[0]]:.3e}, threshold {RANK_DEFICIENCY_TOL * scale:.3e})"
        )


def qr_householder(a) -> QrFactors:
    """Thin QR factorization ``a = q @ r`` with a positive diagonal of ``r``.

    Raises
    ------
    RankDeficient
        If any ``|r_kk| < 1e-12 * max|a|``.
    """
    a = _as_matrix(a)
    m, n = a.shape
    if m < n:
        raise ValueError(f"need rows >= cols, got {m}x{n}")
    scale = float(np.max(np.abs(a)))
    vs, r = _householder_reduce(a)
    _check_rank(r, scale)

    q = np.eye(m, n)
    for k in reversed(range(n)):
        v = vs[k]
        if v is not None:
            q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])

    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return QrFactors(q * signs, r * signs[:, None])


def solve_upper(r: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Back substitution for an upper-triangular system (vector or matrix rhs)."""
    n = r.shape[0]
    x = np.array(b, dtype=float, copy=True)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= r[i, i + 1:] @ x[i + 1:]
        x[i] /= r[i, i]
    return x


def solve_lower(l: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Forward substitution for a lower-triangular system."""
    n = l.shape[0]
    x = np.array(b, dtype=float, copy=True)
    for i in range(n):
        if i:
            x[i] -= l[i, :i] @ x[:i]
        x[i] /= l[i, i]
    return x


def lsq_solve(a, y) -> np.ndarray:
    """Least-squares solution of ``a @ eta ~= y`` via Householder QR.

    ``y`` may be a vector or a matrix of right-hand sides (one per column).
    """
    a = _as_matrix(a)
    y = np.asarray(y, dtype=float)
    m, n = a.shape
    if m < n:
        raise ValueError(f"need rows >= cols, got {m}x{n}")
    if y.shape[0] != m:
        raise ValueError(f"rhs has {y.shape[0]} rows, matrix has {m}")
    scale = float(np.max(np.abs(a)))
    vs, r = _householder_reduce(a)
    _check_rank(r, scale)
    qty = np.array(y, dtype=float, copy=True)
    for k, v in enumerate(vs):
        if v is None:
            continue
        if qty.ndim == 1:
            qty[k:] -= 2.0 * v * (v @ qty[k:])
        else:
            qty[k:] -= 2.0 * np.outer(v, v @ qty[k:])
    return solve_upper(r, qty[:n])


# ---------------------------------------------------------------- eigenvalues


def _balance(a: np.ndarray) -> np.ndarray:
    """Diagonal similarity scaling by powers of two to equalize row/column norms."""
    radix = 2.0
    sqrdx = radix * radix
    n = a.shape[0]
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.sum(np.abs(a[:, i])) - abs(a[i, i])
            r = np.sum(np.abs(a[i, :])) - abs(a[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def _hessenberg(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(alpha, x[0]) if x[0] != 0 else alpha
        v /= np.linalg.norm(v)
        a[k + 1:, :] -= 2.0 * np.outer(v, v @ a[k + 1:, :])
        a[:, k + 1:] -= 2.0 * np.outer(a[:, k + 1:] @ v, v)
        a[k + 2:, k] = 0.0
    return a


def _hqr(a: np.ndarray, max_its: int) -> np.ndarray:
    """Francis double-shift QR on an upper Hessenberg matrix (EISPACK hqr)."""
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = float(np.sum(np.abs(np.triu(a, -1))))
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z:
                        wr[nn] = x - w / z
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if its == max_its:
                raise NonConvergence(f"hqr exceeded {max_its} iterations on eigenvalue {nn}")
            if its in (10, 20):
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            k = m
            while k <= nn - 1:
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s != 0.0:
                    if k == m:
                        if l != m:
                            a[k, k - 1] = -a[k, k - 1]
                    else:
                        a[k, k - 1] = -s * x
                    p += s
                    x = p / s
                    y = q / s
                    z = r / s
                    q /= p
                    r /= p
                    for j in range(k, nn + 1):
                        p = a[k, j] + q * a[k + 1, j]
                        if k != nn - 1:
                            p += r * a[k + 2, j]
                            a[k + 2, j] -= p * z
                        a[k + 1, j] -= p * y
                        a[k, j] -= p * x
                    mmin = nn if nn < k + 3 else k + 3
                    for i in range(l, mmin + 1):
                        p = x * a[i, k] + y * a[i, k + 1]
                        if k != nn - 1:
                            p += z * a[i, k + 2]
                            a[i, k + 2] -= p * r
                        a[i, k + 1] -= p * q
                        a[i, k] -= p
                k += 1
    return wr + 1j * wi


def eigenvalues(a, max_its: int = 60) -> np.ndarray:
    """Eigenvalues of a small square matrix (n <= 32) as a complex array.

    Balancing, Householder reduction to Hessenberg form, then Francis
    double-shift QR. Order is unspecified.
    """
    a = _as_matrix(a)
    n, n2 = a.shape
    if n != n2:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if n > 32:
        raise ValueError("eigenvalues() is intended for matrices up to 32x32")
    if n == 1:
        return np.array([complex(a[0, 0])])
    h = _hessenberg(_balance(a))
    return _hqr(h, max_its)


# ----------------------------------------------------------------------- rank


def rank(a, tol: float = 1e-10) -> int:
    """Numerical rank from a column-pivoted Householder QR.

    Columns are normalized to unit length first, which makes the count
    invariant under column scaling. Counts ``|r_kk| > tol * max|r_kk|``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = _as_matrix(a)
    norms = np.linalg.norm(a, axis=0)
    nz = norms > 0
    if not np.any(nz):
        return 0
    a = a[:, nz] / norms[nz]
    m, n = a.shape
    diag = []
    for k in range(min(m, n)):
        col_norms = np.linalg.norm(a[k:, k:], axis=0)
        j = k + int(np.argmax(col_norms))
        if j != k:
            a[:, [k, j]] = a[:, [j, k]]
        x = a[k:, k]
        alpha = np.linalg.norm(x)
        diag.append(alpha)
        if alpha == 0.0:
            break
        v = x.copy()
        v[0] += math.copysign(alpha, x[0]) if x[0] != 0 else alpha
        v /= np.linalg.norm(v)
        a[k:, k:] -= 2.0 * np.outer(v, v @ a[k:, k:])
    diag = np.asarray(diag)
    return int(np.sum(diag > tol * diag.max()))


# --------------------------------------------------------- finite differences


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function.

    The perturbation of component ``i`` is ``step * max(1, |x_i|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    if not np.all(np.isfinite(f0)):
        raise NonFiniteEvaluation("f(x) is not finite")
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteEvaluation(f"non-finite value probing component {i}")
        jac[:, i] = (fp - fm) / (xp[i] - xm[i])
    return jac
