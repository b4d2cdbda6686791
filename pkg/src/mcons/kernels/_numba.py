"""numba versions of the pairwise kernels; same contracts as ``_numpy``.

Outer loops run under ``prange`` over the receiving node; each node's sum is
accumulated serially in index order, so results do not depend on the thread count.
"""
import numpy as np
from numba import njit, prange

SPHERE_CUT = np.pi - 1e-6
GRASSMANN_MIN_COS = np.sin(1e-6)


@njit(cache=True)
def _first(bad):
    for i in range(bad.shape[0]):
        if bad[i] >= 0:
            return i * bad.shape[0] + bad[i]
    return -1


@njit(parallel=True, cache=True)
def sphere_pair_dist_sq(X):
    N, n = X.shape
    D = np.zeros((N, N))
    for i in prange(N):
        for j in range(N):
            if j == i:
                continue
            c = 0.0
            for k in range(n):
                c += X[i, k] * X[j, k]
            s2 = 0.0
            for k in range(n):
                p = X[j, k] - c * X[i, k]
                s2 += p * p
            t = np.arctan2(np.sqrt(s2), c)
            D[i, j] = t * t
    return D


@njit(parallel=True, cache=True)
def sphere_consensus_grad(X, Q):
    N, n = X.shape
    G = np.zeros((N, n))
    bad = np.full(N, -1, dtype=np.int64)
    for i in prange(N):
        p = np.empty(n)
        for j in range(N):
            q = Q[i, j]
            if j == i or q == 0.0:
                continue
            c = 0.0
            for k in range(n):
                c += X[i, k] * X[j, k]
            s2 = 0.0
            for k in range(n):
                p[k] = X[j, k] - c * X[i, k]
                s2 += p[k] * p[k]
            s = np.sqrt(s2)
            t = np.arctan2(s, c)
            if t >= SPHERE_CUT:
                if bad[i] < 0:
                    bad[i] = j
                continue
            if s > 0.0:
                f = q * t / s
                for k in range(n):
                    G[i, k] -= f * p[k]
    status = _first(bad)
    return G, status


@njit(parallel=True, cache=True)
def sphere_transport_mix(src, dst, G, P):
    N, n = src.shape
    out = np.zeros((N, n))
    bad = np.full(N, -1, dtype=np.int64)
    for i in prange(N):
        v = np.empty(n)
        for j in range(N):
            w = P[i, j]
            if w == 0.0:
                continue
            c = 0.0
            for k in range(n):
                c += dst[i, k] * src[j, k]
            s2 = 0.0
            for k in range(n):
                v[k] = dst[i, k] - c * src[j, k]
                s2 += v[k] * v[k]
            s = np.sqrt(s2)
            if np.arctan2(s, c) >= SPHERE_CUT:
                if bad[i] < 0:
                    bad[i] = j
                continue
            if s > 0.0:
                r = np.hypot(s, c)
                a = 0.0
                for k in range(n):
                    a += v[k] * G[j, k]
                a /= s
                cm1 = c / r - 1.0
                sn = s / r
                for k in range(n):
                    out[i, k] += w * (G[j, k] + a * (cm1 * v[k] / s - sn * src[j, k]))
            else:
                for k in range(n):
                    out[i, k] += w * G[j, k]
    status = _first(bad)
    return out, status


@njit(cache=True)
def _atan_over(s):
    # arctan(s)/s, with the series near 0 where the quotient is 0/0
    if s < 1e-8:
        return 1.0 - s * s / 3.0
    return np.arctan(s) / s


@njit(cache=True)
def _jacobi_svd(A):
    """One-sided Jacobi: returns (A V, s, V) with the columns of A V orthogonal.

    Singular values come out unsorted but with high relative accuracy, which
    matters for the small principal angles near consensus. No LAPACK call, so
    it is cheap for the r <= a few columns used here.
    """
    n, r = A.shape
    B = A.copy()
    V = np.eye(r)
    for _ in range(60):
        off = 0.0
        for p in range(r - 1):
            for q in range(p + 1, r):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(n):
                    alpha += B[k, p] * B[k, p]
                    beta += B[k, q] * B[k, q]
                    gamma += B[k, p] * B[k, q]
                if gamma == 0.0:
                    continue
                rel = abs(gamma) / np.sqrt(alpha * beta)
                if rel <= 1e-15:
                    continue
                off = max(off, rel)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = c * t
                for k in range(n):
                    bp = B[k, p]
                    bq = B[k, q]
                    B[k, p] = c * bp - sn * bq
                    B[k, q] = sn * bp + c * bq
                for k in range(r):
                    vp = V[k, p]
                    vq = V[k, q]
                    V[k, p] = c * vp - sn * vq
                    V[k, q] = sn * vp + c * vq
        if off <= 1e-15:
            break
    s = np.empty(r)
    for l in range(r):
        acc = 0.0
        for k in range(n):
            acc += B[k, l] * B[k, l]
        s[l] = np.sqrt(acc)
    return B, s, V


@njit(cache=True)
def _angles(Xi, Xj):
    # cosines from X_i^T X_j, sines from H = X_j - X_i M, paired descending/ascending
    M = Xi.T @ Xj
    cos = np.sort(_jacobi_svd(M)[1])[::-1]
    sin = np.sort(_jacobi_svd(Xj - Xi @ M)[1])
    r = cos.shape[0]
    th = np.empty(r)
    for l in range(r):
        th[l] = np.arctan2(sin[l], cos[l])
    return th


@njit(parallel=True, cache=True)
def grassmann_pair_dist_sq(X):
    N = X.shape[0]
    D = np.zeros((N, N))
    for i in prange(N):
        Xi = np.ascontiguousarray(X[i])
        for j in range(i + 1, N):
            th = _angles(Xi, np.ascontiguousarray(X[j]))
            D[i, j] = np.sum(th * th)
    for i in range(N):
        for j in range(i + 1, N):
            D[j, i] = D[i, j]
    return D


@njit(parallel=True, cache=True)
def grassmann_consensus_grad(X, Q):
    N, n, r = X.shape
    G = np.zeros((N, n, r))
    bad = np.full(N, -1, dtype=np.int64)
    for i in prange(N):
        Xi = np.ascontiguousarray(X[i])
        for j in range(N):
            q = Q[i, j]
            if j == i or q == 0.0:
                continue
            Xj = np.ascontiguousarray(X[j])
            M = Xi.T @ Xj
            MV, sm, Vm = _jacobi_svd(M)
            if np.min(sm) <= GRASSMANN_MIN_COS:
                if bad[i] < 0:
                    bad[i] = j
                continue
            # M^{-1} = V S^{-2} (M V)^T
            Minv = (Vm / (sm * sm)) @ MV.T
            L = (Xj - Xi @ M) @ Minv
            # log = U atan(S) V^T = (L V) diag(atan(s)/s) V^T
            LV, s, V = _jacobi_svd(L)
            for l in range(r):
                LV[:, l] *= _atan_over(s[l])
            G[i] -= q * (LV @ V.T)
    status = _first(bad)
    return G, status
