"""Dense symmetric linear algebra: cyclic Jacobi eigensolver and pairwise distances."""

from __future__ import annotations

import numpy as np
from numba import njit


class NotSymmetricError(ValueError):
    pass


class EigenConvergenceError(RuntimeError):
    def __init__(self, residual: float, sweeps: int):
        super().__init__(f"Jacobi did not converge after {sweeps} sweeps "
                         f"(off-diagonal norm {residual:.3e})")
        self.residual = residual
        self.sweeps = sweeps


@njit(cache=True)
def _jacobi(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += a[i, j] * a[i, j]
    target = tol * tol * max(fro, 1e-300)
    off = 0.0
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if off <= target:
            return a, v, sweep, np.sqrt(off)
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return a, v, -1, np.sqrt(off)


def sym_eig(a, tol: float = 1e-15, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues sorted in descending order and the matching orthonormal
    eigenvectors as columns.

    Raises:
        NotSymmetricError: if ``a`` is not square or deviates from its transpose
            by more than 1e-12 in any entry.
        EigenConvergenceError: if the off-diagonal mass has not fallen below
            ``tol`` relative to the Frobenius norm within ``max_sweeps`` sweeps.
    """
    a = np.array(getattr(a, "data", a), dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > 1e-12:
        raise NotSymmetricError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    if a.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    d, v, sweeps, residual = _jacobi(np.ascontiguousarray(a), tol, max_sweeps)
    if sweeps < 0:
        raise EigenConvergenceError(residual, max_sweeps)
    w = np.diag(d).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


@njit(cache=True)
def _sq_dists(z):
    n, p = z.shape
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(p):
                t = z[i, k] - z[j, k]
                acc += t * t
            d[i, j] = acc
            d[j, i] = acc
    return d


def pairwise_sq_dists(z) -> np.ndarray:
    """Squared Euclidean distances between rows.

    Summed from coordinate differences rather than the Gram identity, so
    identical rows give exactly zero and small distances carry no cancellation
    error (which a tiny bandwidth would otherwise amplify).
    """
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError(f"expected an n x p matrix with n >= 1, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("features have non-finite entries")
    return _sq_dists(np.ascontiguousarray(z))
