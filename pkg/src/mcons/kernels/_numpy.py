"""Vectorized numpy versions of the pairwise kernels.

Every kernel returning a tangent field also returns a status: -1, or the flat
index ``i * N + j`` of the first pair at or beyond the cut locus.
"""
import numpy as np

SPHERE_CUT = np.pi - 1e-6
# smallest admissible cosine of the largest principal angle
GRASSMANN_MIN_COS = np.sin(1e-6)


def _first_bad(bad):
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else -1


def sphere_pair_dist_sq(X):
    C = X @ X.T
    P = X[None, :, :] - C[:, :, None] * X[:, None, :]
    S = np.sqrt(np.einsum("ijk,ijk->ij", P, P))
    T = np.arctan2(S, C)
    np.fill_diagonal(T, 0.0)
    return T * T


def sphere_consensus_grad(X, Q):
    N = X.shape[0]
    C = X @ X.T
    # p_ij = x_j - <x_i, x_j> x_i, tangent at x_i
    P = X[None, :, :] - C[:, :, None] * X[:, None, :]
    S = np.sqrt(np.einsum("ijk,ijk->ij", P, P))
    T = np.arctan2(S, C)
    W = Q.copy()
    np.fill_diagonal(W, 0.0)
    status = _first_bad((W != 0) & (T >= SPHERE_CUT))
    if status >= 0:
        return np.zeros_like(X), status
    F = np.divide(T, S, out=np.zeros_like(T), where=S > 0)
    G = -np.einsum("ij,ijk->ik", W * F, P)
    return G, -1


def sphere_transport_mix(src, dst, G, P):
    # pair (i, j) carries G[j] from src[j] to dst[i]
    C = dst @ src.T
    V = dst[:, None, :] - C[:, :, None] * src[None, :, :]
    S = np.sqrt(np.einsum("ijk,ijk->ij", V, V))
    T = np.arctan2(S, C)
    status = _first_bad((P != 0) & (T >= SPHERE_CUT))
    if status >= 0:
        return np.zeros_like(G), status
    R = np.hypot(S, C)
    U = np.divide(V, S[:, :, None], out=np.zeros_like(V), where=S[:, :, None] > 0)
    A = np.einsum("ijk,jk->ij", U, G)
    out = (
        P @ G
        + np.einsum("ij,ijk->ik", P * A * (C / R - 1.0), U)
        - (P * A * (S / R)) @ src
    )
    return out, -1


def _grassmann_angles(Xi, Xj):
    M = np.swapaxes(Xi, -1, -2) @ Xj
    cos = np.linalg.svd(M, compute_uv=False)
    sin = np.linalg.svd(Xj - Xi @ M, compute_uv=False)[..., ::-1]
    return np.arctan2(sin, cos)


def grassmann_pair_dist_sq(X):
    N = X.shape[0]
    D = np.zeros((N, N))
    if N < 2:
        return D
    iu, ju = np.triu_indices(N, 1)
    th = _grassmann_angles(X[iu], X[ju])
    D[iu, ju] = np.sum(th * th, axis=-1)
    return D + D.T


def grassmann_log_pairs(Xi, Xj):
    """Batched Grassmann logarithm log_{Xi}(Xj); status indexes the first bad pair."""
    M = np.swapaxes(Xi, -1, -2) @ Xj
    smin = np.linalg.svd(M, compute_uv=False)[..., -1]
    status = _first_bad(smin <= GRASSMANN_MIN_COS)
    if status >= 0:
        return np.zeros_like(Xi), status
    H = Xj - Xi @ M
    # H M^{-1} = U tan(theta) V^T
    L = np.swapaxes(np.linalg.solve(np.swapaxes(M, -1, -2), np.swapaxes(H, -1, -2)), -1, -2)
    U, s, Vt = np.linalg.svd(L, full_matrices=False)
    return (U * np.arctan(s)[..., None, :]) @ Vt, -1


def grassmann_consensus_grad(X, Q):
    N = X.shape[0]
    W = Q.copy()
    np.fill_diagonal(W, 0.0)
    ii, jj = np.nonzero(W)
    G = np.zeros_like(X)
    if ii.size == 0:
        return G, -1
    L, status = grassmann_log_pairs(X[ii], X[jj])
    if status >= 0:
        return G, int(ii[status] * N + jj[status])
    np.add.at(G, ii, -W[ii, jj][:, None, None] * L)
    return G, -1
