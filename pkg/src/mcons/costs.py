"""Per-node cost functions, their Riemannian gradients, and gradient noise.

Every supported cost is a quadratic form in ambient coordinates,

    f^i(x) = alpha * Tr(x^T C_i x) + Tr(B_i^T x) + e_i,

so a network of costs is stored as one :class:`CostStack` and evaluated in batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mcons.manifolds import TangentVector, project_tangent, random_tangent, streams

KINDS = ("eigvec", "pca", "quadratic")
_ALPHA = {"eigvec": -1.0, "pca": -0.5, "quadratic": 0.5}


@dataclass(frozen=True, eq=False)
class NodeCost:
    """Local cost at one node.

    ``data`` is an ``(m, n)`` sample block for eigvec/pca and a ``(H, c)`` pair
    (symmetric ``n x n`` matrix, ``n x r`` offset) for quadratic.
    """

    kind: str
    data: object
    gram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "quadratic":
            H, c = self.data
            H = np.array(H, dtype=float)
            c = np.array(c, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if H.shape != (c.shape[0], c.shape[0]) or not np.allclose(H, H.T, atol=1e-12):
                raise ValueError("quadratic cost needs a symmetric n x n matrix and an n x r offset")
            data, gram = (H, c), H
        else:
            Z = np.atleast_2d(np.array(self.data, dtype=float))
            data, gram = Z, Z.T @ Z
        arrays = data if isinstance(data, tuple) else (data,)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("cost data must be finite")
        for a in arrays + (gram,):
            a.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "gram", gram)

    @property
    def dim(self):
        return self.gram.shape[0]

    @property
    def num_samples(self):
        return 0 if self.kind == "quadratic" else self.data.shape[0]

    @property
    def alpha(self):
        return _ALPHA[self.kind]

    def linear(self, r):
        if self.kind != "quadratic":
            return np.zeros((self.dim, r))
        H, c = self.data
        return -H @ c

    def constant(self):
        if self.kind != "quadratic":
            return 0.0
        H, c = self.data
        return 0.5 * float(np.sum(c * (H @ c)))


def _check_shape(c, x):
    if x.coords.shape[0] != c.dim:
        raise ValueError(f"cost of dimension {c.dim} evaluated at a point of shape {x.coords.shape}")
    if c.kind == "quadratic" and c.data[1].shape[1] != x.coords.shape[1]:
        raise ValueError("quadratic offset and point have different column counts")


def euclidean_grad(c, X):
    """Ambient gradient at one point or a stack of points."""
    g = 2.0 * c.alpha * (c.gram @ X)
    if c.kind == "quadratic":
        g = g + c.linear(X.shape[-1])
    return g


def cost_value(c, x):
    _check_shape(c, x)
    X = x.coords
    return float(c.alpha * np.sum(X * (c.gram @ X)) + np.sum(c.linear(X.shape[1]) * X) + c.constant())


def riemannian_grad(c, x):
    _check_shape(c, x)
    return project_tangent(x, euclidean_grad(c, x.coords))


@dataclass
class NoiseModel:
    """Additive tangent-space Gaussian noise with one independent stream per node."""

    sigma: float
    per_node_streams: list

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be nonnegative")

    @classmethod
    def from_seed(cls, sigma, master_seed, num_nodes):
        return cls(float(sigma), streams(master_seed, num_nodes))


def noisy_grad(c, x, noise, node):
    g = riemannian_grad(c, x)
    if noise.sigma == 0:
        return g
    m = random_tangent(x, noise.sigma, noise.per_node_streams[node])
    return TangentVector(x, g.coords + m.coords, check=False)


def partition_dataset(samples, num_nodes, seed, kind="eigvec"):
    """Seeded shuffle followed by round-robin assignment of sample rows to nodes."""
    Z = np.atleast_2d(np.asarray(samples, dtype=float))
    if num_nodes < 1:
        raise ValueError("need at least one node")
    if Z.shape[0] < 1:
        raise ValueError("need at least one sample")
    perm = np.random.default_rng(seed).permutation(Z.shape[0])
    return [NodeCost(kind, Z[perm[i::num_nodes]]) for i in range(num_nodes)]


def synthetic_samples(dims, num_samples, spectrum_decay, seed):
    """Gaussian-looking samples whose empirical covariance has an exact spectrum.

    Returns ``(Z, U, lam)`` with ``Z.T @ Z / num_samples == U diag(lam) U.T`` up to
    rounding, ``lam[l] = spectrum_decay**l`` and ``U`` a random orthogonal basis.
    """
    if num_samples < dims:
        raise ValueError("need num_samples >= dims for an exact covariance spectrum")
    if not 0 < spectrum_decay <= 1:
        raise ValueError("spectrum_decay must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    lam = spectrum_decay ** np.arange(dims, dtype=float)
    U = np.linalg.qr(rng.standard_normal((dims, dims)))[0]
    Qs = np.linalg.qr(rng.standard_normal((num_samples, dims)))[0]
    Z = np.sqrt(num_samples) * (Qs * np.sqrt(lam)) @ U.T
    return Z, U, lam


def load_dataset(path):
    Z = np.loadtxt(path, ndmin=2)
    if not np.all(np.isfinite(Z)):
        raise ValueError(f"{path}: non-finite entries")
    return Z


def save_dataset(Z, path):
    np.savetxt(path, np.asarray(Z, dtype=float), fmt="%.17g")


def random_quadratics(num_nodes, n, r, seed, cond=10.0):
    """Random strongly convex quadratics with eigenvalues in [1, cond]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(num_nodes):
        O = np.linalg.qr(rng.standard_normal((n, n)))[0]
        H = (O * rng.uniform(1.0, cond, n)) @ O.T
        out.append(NodeCost("quadratic", (0.5 * (H + H.T), rng.standard_normal((n, r)))))
    return out


class CostStack:
    """Batched view of N node costs for the engine.

    ``local_egrad(X)`` evaluates node i's gradient at ``X[i]``; ``global_values``
    evaluates f = (1/N) sum_i f^i at every row of ``X``.
    """

    def __init__(self, costs, manifold):
        costs = list(costs)
        if not costs:
            raise ValueError("need at least one cost")
        kinds = {c.kind for c in costs}
        if len(kinds) != 1:
            raise ValueError("all node costs must share one kind")
        n, r = manifold.shape
        if any(c.dim != n for c in costs):
            raise ValueError(f"cost dimension does not match the manifold ambient size {n}")
        self.costs = costs
        self.kind = costs[0].kind
        self.alpha = costs[0].alpha
        self.manifold = manifold
        self.C = np.stack([c.gram for c in costs])
        self.B = np.stack([c.linear(r) for c in costs])
        self.e = np.array([c.constant() for c in costs])
        self.C_mean = self.C.mean(axis=0)
        self.B_mean = self.B.mean(axis=0)
        self.e_mean = float(self.e.mean())
        self._blocks = [c.data for c in costs] if self.kind != "quadratic" else None

    def __len__(self):
        return len(self.costs)

    def local_egrad(self, X):
        return 2.0 * self.alpha * (self.C @ X) + self.B

    def local_rgrad(self, X):
        return self.manifold.proj(X, self.local_egrad(X))

    def local_values(self, X):
        return self.alpha * np.sum(X * (self.C @ X), axis=(-2, -1)) + np.sum(self.B * X, axis=(-2, -1)) + self.e

    def global_values(self, X):
        q = np.sum(X * (self.C_mean @ X), axis=(-2, -1))
        return self.alpha * q + np.sum(self.B_mean * X, axis=(-2, -1)) + self.e_mean

    def global_egrad(self, X):
        return 2.0 * self.alpha * (self.C_mean @ X) + self.B_mean

    def global_rgrad(self, X):
        return self.manifold.proj(X, self.global_egrad(X))

    def minibatch_rgrad(self, X, node_streams):
        """Unbiased one-sample estimate m_i * grad of (z z^T) per node."""
        if self._blocks is None:
            return self.local_rgrad(X)
        G = np.empty_like(X)
        for i, (Z, s) in enumerate(zip(self._blocks, node_streams)):
            z = Z[s.integers(Z.shape[0])]
            G[i] = 2.0 * self.alpha * Z.shape[0] * np.outer(z, z @ X[i])
        return self.manifold.proj(X, G)

    def data_matrix(self):
        """A = sum over all samples of z z^T (the centralized data matrix)."""
        return self.C.sum(axis=0)
